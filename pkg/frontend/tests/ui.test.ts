// @vitest-environment jsdom
import { describe, expect, it, vi } from "vitest";

import { AuditApi, PairPayload } from "../src/api.js";
import { Controller } from "../src/state.js";
import { LABEL_KEYS, bindKeyboard, neighborFigure, render } from "../src/ui.js";

const pairView: { kind: "pair"; pair: PairPayload; warning: string | null } = {
  kind: "pair",
  warning: null,
  pair: {
    status: "ok",
    pair_id: 4,
    query_index: 4,
    neighbor_split: "train",
    neighbor_index: 9,
    distance: 0.123456,
    test_image_url: "/api/images/test/4.png",
    neighbor_image_url: "/api/images/train/9.png",
    diff_image_url: "/api/pairs/4/diff.png",
    progress: {
      counts: { exact: 1, near: 0, similar: 0, different: 2 },
      consecutive_different: 2,
      stop_threshold: 20,
      cursor: 4,
      queue_length: 30,
      state: "active",
    },
  },
};

describe("pair screen", () => {
  it("renders four label buttons, three images, and the 4-decimal distance", () => {
    const root = document.createElement("main");
    render(root, pairView, new Controller(new AuditApi("")));
    const buttons = root.querySelectorAll(".label-buttons button");
    expect(buttons.length).toBe(4);
    expect(root.querySelectorAll("img.pixelated").length).toBe(3);
    expect(root.textContent).toContain("0.1235");
    expect(root.textContent).toContain("different streak 2 / 20");
  });

  it("shows the out-of-order warning banner when present", () => {
    const root = document.createElement("main");
    render(root, { ...pairView, warning: "submission was out of order" }, new Controller(new AuditApi("")));
    expect(root.querySelector(".warning")?.textContent).toContain("out of order");
  });

  it("maps keys 1-4 onto one label submission each", () => {
    const controller = new Controller(new AuditApi(""));
    Object.defineProperty(controller, "view", { get: () => pairView });
    const submitted: string[] = [];
    controller.submitLabel = async (label) => {
      submitted.push(label);
    };
    const handler = bindKeyboard(controller);
    for (const key of ["1", "2", "3", "4", "x"]) {
      handler(new KeyboardEvent("keydown", { key }));
    }
    document.removeEventListener("keydown", handler);
    expect(submitted).toEqual(["exact", "near", "similar", "different"]);
    expect(Object.values(LABEL_KEYS)).toEqual(["exact", "near", "similar", "different"]);
  });
});

describe("candidate screen", () => {
  it("flags a distance-zero neighbor in red", () => {
    const zero = neighborFigure({ split: "train", index: 3, distance: 0, image_url: "/x.png" });
    expect(zero.className).toContain("duplicate-warning");
    expect(zero.textContent).toContain("likely duplicate");
    const far = neighborFigure({ split: "test", index: 5, distance: 0.8, image_url: "/y.png" });
    expect(far.className).not.toContain("duplicate-warning");
  });

  it("keeps Approve disabled until the controller flags the neighbors as shown", () => {
    const controller = new Controller(new AuditApi(""));
    const offer = {
      status: "ok" as const,
      candidate_id: 1,
      target_index: 2,
      class_index: 0,
      class_name: "airplane",
      candidate_image_url: "/c.png",
      target_image_url: "/t.png",
      neighbors: [
        { split: "train", index: 0, distance: 0.2, image_url: "/n0.png" },
        { split: "train", index: 1, distance: 0.3, image_url: "/n1.png" },
        { split: "test", index: 2, distance: 0.4, image_url: "/n2.png" },
      ],
    };
    const root = document.createElement("main");
    render(root, { kind: "candidate", offer, neighborsShown: false }, controller);
    expect(root.querySelector<HTMLButtonElement>("button.approve")?.disabled).toBe(true);
    expect(root.querySelector<HTMLButtonElement>("button.reject")?.disabled).toBe(false);

    const shown = vi.spyOn(controller, "markNeighborsShown");
    root.querySelectorAll(".neighbors img").forEach((img) => {
      img.dispatchEvent(new Event("load"));
    });
    expect(shown).toHaveBeenCalledTimes(1);

    render(root, { kind: "candidate", offer, neighborsShown: true }, controller);
    expect(root.querySelector<HTMLButtonElement>("button.approve")?.disabled).toBe(false);
  });
});

describe("terminal screens", () => {
  it("renders completion counts", () => {
    const root = document.createElement("main");
    render(
      root,
      {
        kind: "done",
        phase: "annotation",
        progress: {
          counts: { exact: 2, near: 3, similar: 1, different: 20 },
          consecutive_different: 20,
          stop_threshold: 20,
          cursor: 26,
          queue_length: 30,
          state: "completed",
        },
      },
      new Controller(new AuditApi("")),
    );
    expect(root.textContent).toContain("session complete");
    expect(root.textContent).toContain("Different: 20");
  });

  it("names the class on the pool-exhausted screen", () => {
    const root = document.createElement("main");
    render(
      root,
      { kind: "pool-exhausted", targetIndex: 7, classIndex: 3, className: "cat" },
      new Controller(new AuditApi("")),
    );
    expect(root.textContent).toContain("cat");
    expect(root.textContent).toContain("test #7");
  });
});
