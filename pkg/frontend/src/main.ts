import { AuditApi } from "./api.js";
import { Controller } from "./state.js";
import { bindKeyboard, render } from "./ui.js";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const controller = new Controller(new AuditApi(""));
controller.subscribe((view) => render(root, view, controller));
bindKeyboard(controller);
void controller.start();
