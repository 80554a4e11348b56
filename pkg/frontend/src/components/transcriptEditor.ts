/**
 * Per-line transcript editor: OCR text vs corrected text with a character
 * diff, status chips, charset warnings, and an unsaved-edit flag. Saves go
 * through the store, which only updates state from the server's response.
 */

import type { WorkspaceStore, LineView } from "../store.js";
import { diffSegments } from "../text.js";

const STATUS_LABELS: Record<string, string> = {
  unprocessed: "unprocessed",
  ocr_done: "OCR done",
  corrected: "corrected",
};

export class TranscriptEditor {
  constructor(
    private readonly root: HTMLElement,
    private readonly store: WorkspaceStore,
  ) {}

  render(): void {
    const pv = this.store.getState().pageView;
    this.root.replaceChildren();
    if (!pv) return;
    for (const view of pv.lines) {
      this.root.appendChild(this.renderLine(view));
    }
  }

  private renderLine(view: LineView): HTMLElement {
    const { record } = view;
    const row = document.createElement("div");
    row.className = "line-row";
    row.dataset.lineId = record.id;

    const chip = document.createElement("span");
    chip.className = `chip chip-${record.status}`;
    chip.textContent = STATUS_LABELS[record.status] ?? record.status;
    row.appendChild(chip);

    if (view.draftText !== null) {
      const unsaved = document.createElement("span");
      unsaved.className = "chip chip-unsaved";
      unsaved.textContent = "unsaved";
      row.appendChild(unsaved);
    }

    if (record.charset_ok === false) {
      const warn = document.createElement("span");
      warn.className = "chip chip-warning";
      warn.title = `characters outside the model charset: ${record.bad_chars.join(" ")}`;
      warn.textContent = "charset";
      row.appendChild(warn);
    }

    const diffEl = document.createElement("div");
    diffEl.className = "line-diff";
    const corrected = view.draftText ?? record.corrected_text ?? "";
    if (record.ocr_text !== null && corrected) {
      for (const seg of diffSegments(record.ocr_text, corrected)) {
        const span = document.createElement("span");
        span.className = `diff-${seg.kind}`;
        span.textContent = seg.text;
        diffEl.appendChild(span);
      }
    }
    row.appendChild(diffEl);

    const input = document.createElement("input");
    input.type = "text";
    input.className = "line-input";
    input.value = view.draftText ?? record.corrected_text ?? record.ocr_text ?? "";
    input.addEventListener("input", () => {
      this.store.setDraftText(record.id, input.value);
    });
    input.addEventListener("keydown", (e) => {
      if (e.key === "Enter") {
        void this.store.saveText(record.id).then(() => {
          const next = this.store.nextLineId(record.id);
          if (next) this.focusLine(next);
          this.render();
        });
      }
    });
    row.appendChild(input);

    const ocrButton = document.createElement("button");
    ocrButton.textContent = "Run OCR";
    ocrButton.addEventListener("click", () => {
      void this.store.runOcr(record.id).then(() => this.render());
    });
    row.appendChild(ocrButton);

    const saveButton = document.createElement("button");
    saveButton.textContent = "Save";
    saveButton.addEventListener("click", () => {
      void this.store.saveText(record.id).then(() => this.render());
    });
    row.appendChild(saveButton);

    return row;
  }

  focusLine(lineId: string): void {
    const input = this.root.querySelector<HTMLInputElement>(
      `[data-line-id="${lineId}"] .line-input`,
    );
    input?.focus();
  }
}
