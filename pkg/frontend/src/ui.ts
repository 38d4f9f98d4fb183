// DOM rendering and keyboard bindings. Images are magnified with
// nearest-neighbor upscaling (image-rendering: pixelated) so 32x32 content
// stays inspectable; shortcuts 1-4 label, A approves, R rejects.

import { LabelValue, NeighborPayload, Progress } from "./api.js";
import { Controller, View } from "./state.js";

export const LABEL_KEYS: Record<string, LabelValue> = {
  "1": "exact",
  "2": "near",
  "3": "similar",
  "4": "different",
};

const LABEL_TITLES: Record<LabelValue, string> = {
  exact: "Exact duplicate",
  near: "Near-duplicate",
  similar: "Very similar",
  different: "Different",
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function image(url: string, caption: string, extraClass = ""): HTMLElement {
  const figure = el("figure", `shot ${extraClass}`.trim());
  const img = el("img", "pixelated");
  img.src = url;
  img.alt = caption;
  figure.append(img, el("figcaption", undefined, caption));
  return figure;
}

function progressBar(progress: Progress): HTMLElement {
  const wrap = el("div", "progress");
  wrap.append(
    el("span", undefined, `pair ${progress.cursor + 1} / ${progress.queue_length}`),
    el(
      "span",
      "streak",
      `different streak ${progress.consecutive_different} / ${progress.stop_threshold}`,
    ),
  );
  return wrap;
}

function countsTable(counts: Record<LabelValue, number>): HTMLElement {
  const list = el("ul", "counts");
  (Object.keys(LABEL_TITLES) as LabelValue[]).forEach((label) => {
    list.append(el("li", undefined, `${LABEL_TITLES[label]}: ${counts[label]}`));
  });
  return list;
}

export function neighborFigure(neighbor: NeighborPayload): HTMLElement {
  const likelyDuplicate = neighbor.distance <= 1e-6;
  const figure = image(
    neighbor.image_url,
    `${neighbor.split} #${neighbor.index} @ ${neighbor.distance.toFixed(4)}`,
    likelyDuplicate ? "duplicate-warning" : "",
  );
  if (likelyDuplicate) {
    figure.append(el("div", "dup-flag", "likely duplicate"));
  }
  return figure;
}

export function render(root: HTMLElement, view: View, controller: Controller): void {
  root.replaceChildren();
  switch (view.kind) {
    case "loading":
      root.append(el("p", "loading", "loading session..."));
      return;

    case "banner": {
      const banner = el("div", "banner");
      banner.append(
        el("p", undefined, `server error: ${view.message}`),
        button("Retry", "retry", () => void controller.retry()),
      );
      root.append(banner);
      return;
    }

    case "pair": {
      const { pair } = view;
      if (view.warning) root.append(el("div", "warning", view.warning));
      root.append(progressBar(pair.progress));
      const row = el("div", "pair-row");
      row.append(
        image(pair.test_image_url, `test #${pair.query_index}`),
        image(pair.neighbor_image_url, `${pair.neighbor_split} #${pair.neighbor_index}`),
        image(pair.diff_image_url, "pixel difference"),
      );
      root.append(row);
      root.append(el("p", "distance", `feature distance ${pair.distance.toFixed(4)}`));
      const buttons = el("div", "label-buttons");
      (Object.entries(LABEL_KEYS) as [string, LabelValue][]).forEach(([key, label]) => {
        buttons.append(
          button(`${key} · ${LABEL_TITLES[label]}`, `label-${label}`, () =>
            void controller.submitLabel(label),
          ),
        );
      });
      root.append(buttons);
      return;
    }

    case "candidate": {
      const { offer } = view;
      root.append(
        el(
          "h2",
          undefined,
          `replacement for test #${offer.target_index} (${offer.class_name ?? "class " + offer.class_index})`,
        ),
      );
      const row = el("div", "pair-row");
      row.append(image(offer.candidate_image_url, `candidate #${offer.candidate_id}`));
      root.append(row);
      root.append(el("h3", undefined, "three nearest neighbors"));
      const neighbors = el("div", "pair-row neighbors");
      let loaded = 0;
      offer.neighbors.forEach((n) => {
        const figure = neighborFigure(n);
        const img = figure.querySelector("img")!;
        img.addEventListener("load", () => {
          loaded += 1;
          if (loaded === offer.neighbors.length) controller.markNeighborsShown();
        });
        neighbors.append(figure);
      });
      root.append(neighbors);
      const approve = button("A · Approve", "approve", () => void controller.decide(true));
      approve.disabled = !view.neighborsShown;
      const reject = button("R · Reject", "reject", () => void controller.decide(false));
      root.append(el("div", "label-buttons"), approve, reject);
      return;
    }

    case "pool-exhausted": {
      root.append(
        el("div", "warning", `candidate pool exhausted for ${view.className ?? "class " + view.classIndex} (test #${view.targetIndex} stays unreplaced)`),
        button("Continue", "continue", () => void controller.continueAfterExhausted()),
      );
      return;
    }

    case "done": {
      root.append(el("h2", undefined, view.phase === "replacement" ? "replacement complete" : "session complete"));
      if (view.progress) {
        root.append(countsTable(view.progress.counts));
        root.append(progressBar(view.progress));
      }
      return;
    }
  }
}

function button(label: string, className: string, onClick: () => void): HTMLButtonElement {
  const node = el("button", className, label);
  node.addEventListener("click", onClick);
  return node;
}

export function bindKeyboard(controller: Controller): (event: KeyboardEvent) => void {
  const handler = (event: KeyboardEvent) => {
    const view = controller.view;
    if (view.kind === "pair" && LABEL_KEYS[event.key]) {
      void controller.submitLabel(LABEL_KEYS[event.key]);
    } else if (view.kind === "candidate" && event.key.toLowerCase() === "a") {
      void controller.decide(true);
    } else if (view.kind === "candidate" && event.key.toLowerCase() === "r") {
      void controller.decide(false);
    } else if (view.kind === "pool-exhausted" && event.key === "Enter") {
      void controller.continueAfterExhausted();
    } else if (view.kind === "banner" && event.key === "Enter") {
      void controller.retry();
    }
  };
  document.addEventListener("keydown", handler);
  return handler;
}
