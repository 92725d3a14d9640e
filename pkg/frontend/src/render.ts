import { GRID, gridIndex } from "./grid.js";
import type { GradingSession, SessionState } from "./session.js";
import type { ScaleExemplar } from "./types.js";

/**
 * DOM rendering. The reference scale strip is present on every grading
 * screen, exemplars in ascending score order; a broken exemplar image
 * degrades to a placeholder that keeps its grade label.
 */

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

function exemplarCard(
  exemplar: ScaleExemplar,
  onCompare: (exemplar: ScaleExemplar) => void,
): HTMLElement {
  const card = el("figure", "exemplar");
  card.dataset.testid = "exemplar";
  card.dataset.score = exemplar.score.toFixed(1);

  const img = el("img", "exemplar-img");
  img.src = exemplar.image_uri;
  img.alt = `exemplar graded ${exemplar.score.toFixed(1)}`;
  img.addEventListener("error", () => {
    const placeholder = el("div", "exemplar-placeholder", "image unavailable");
    placeholder.dataset.testid = "exemplar-placeholder";
    img.replaceWith(placeholder);
  });
  img.addEventListener("click", () => onCompare(exemplar));

  const caption = el("figcaption", "exemplar-score", exemplar.score.toFixed(1));
  card.append(img, caption);
  return card;
}

function scaleStrip(
  state: SessionState,
  onCompare: (exemplar: ScaleExemplar) => void,
): HTMLElement {
  const strip = el("div", "scale-strip");
  strip.dataset.testid = "scale-strip";
  const exemplars = [...(state.scale?.exemplars ?? [])].sort(
    (a, b) => a.score - b.score,
  );
  for (const exemplar of exemplars) strip.append(exemplarCard(exemplar, onCompare));
  return strip;
}

function zoomable(img: HTMLImageElement): HTMLElement {
  const frame = el("div", "zoom-frame");
  let scale = 1;
  let tx = 0;
  let ty = 0;
  const apply = () => {
    img.style.transform = `translate(${tx}px, ${ty}px) scale(${scale})`;
  };
  frame.addEventListener("wheel", (event) => {
    event.preventDefault();
    scale = Math.min(8, Math.max(1, scale * (event.deltaY < 0 ? 1.15 : 0.87)));
    apply();
  });
  let dragging = false;
  let lastX = 0;
  let lastY = 0;
  frame.addEventListener("pointerdown", (event) => {
    dragging = true;
    lastX = event.clientX;
    lastY = event.clientY;
  });
  frame.addEventListener("pointermove", (event) => {
    if (!dragging) return;
    tx += event.clientX - lastX;
    ty += event.clientY - lastY;
    lastX = event.clientX;
    lastY = event.clientY;
    apply();
  });
  frame.addEventListener("pointerup", () => {
    dragging = false;
  });
  frame.append(img);
  return frame;
}

function scoreControls(session: GradingSession): HTMLElement {
  const state = session.state;
  const wrap = el("div", "score-controls");

  // Discrete slider: 19 stops, one per legal grade.
  const slider = el("input") as HTMLInputElement;
  slider.type = "range";
  slider.min = "0";
  slider.max = String(GRID.length - 1);
  slider.step = "1";
  slider.dataset.testid = "score-slider";
  const index = state.selected === null ? -1 : gridIndex(state.selected);
  slider.value = index >= 0 ? String(index) : "0";
  slider.addEventListener("input", () => {
    session.selectScore(GRID[Number(slider.value)]);
  });

  const label = el(
    "output",
    "score-label",
    state.selected === null ? "—" : state.selected.toFixed(1),
  );
  label.dataset.testid = "score-label";

  const submit = el("button", "submit", "submit score") as HTMLButtonElement;
  submit.dataset.testid = "submit";
  submit.disabled = !session.canSubmit;
  submit.addEventListener("click", () => void session.submit());

  wrap.append(slider, label, submit);
  return wrap;
}

export function render(root: HTMLElement, session: GradingSession): void {
  const state = session.state;
  root.textContent = "";
  const app = el("div", "app");

  if (state.view === "loading") {
    app.append(el("p", "status", "loading…"));
    root.append(app);
    return;
  }
  if (state.view === "error") {
    app.append(el("p", "status error", state.message));
    root.append(app);
    return;
  }
  if (state.view === "done") {
    const done = el("section", "completion");
    done.dataset.testid = "completion";
    done.append(
      el("h2", undefined, "all images graded"),
      el("p", undefined, `${state.completed} scores submitted this session`),
    );
    const exportLink = el("a", "export-link", "download labels") as HTMLAnchorElement;
    exportLink.dataset.testid = "export-link";
    exportLink.href = session.exportUrl();
    done.append(exportLink);
    app.append(done);
    root.append(app);
    return;
  }

  // grading view: reference scale always visible
  const compare = el("div", "compare");
  compare.dataset.testid = "compare";
  app.append(
    scaleStrip(state, (exemplar) => {
      compare.textContent = "";
      const img = el("img", "compare-img");
      img.src = exemplar.image_uri;
      img.alt = `exemplar ${exemplar.score.toFixed(1)} enlarged`;
      compare.append(img, el("p", undefined, `grade ${exemplar.score.toFixed(1)}`));
    }),
  );

  const task = state.task!;
  const target = el("img", "target-img") as HTMLImageElement;
  target.src = task.image_uri;
  target.alt = "image being graded";
  target.dataset.testid = "target";
  const stage = el("div", "stage");
  stage.append(zoomable(target), compare);
  app.append(stage);

  const status = el(
    "p",
    "progress",
    `${state.completed} done, ${state.remaining} open` +
      (state.offline ? " — offline, queued locally" : "") +
      (state.queued > 0 ? ` (${state.queued} pending sync)` : ""),
  );
  status.dataset.testid = "progress";
  app.append(status);

  app.append(scoreControls(session));

  if (state.violations.length > 0) {
    const list = el("ul", "violations");
    list.dataset.testid = "violations";
    for (const violation of state.violations) {
      list.append(el("li", undefined, `${violation.kind}: ${violation.message}`));
    }
    app.append(list);
  }

  root.append(app);
}

/** Wire a session to a root element and the keyboard. */
export function mount(root: HTMLElement, session: GradingSession): void {
  session.onChange(() => render(root, session));
  document.addEventListener("keydown", (event) => {
    if (session.state.view === "grading") {
      if (event.key === "Enter") {
        void session.submit();
      } else {
        session.handleKey(event.key);
      }
    }
  });
  render(root, session);
}
