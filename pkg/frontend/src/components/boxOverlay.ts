/**
 * Canvas overlay that draws the page image with editable line boxes.
 * All drag math happens in page-image pixel coordinates; the canvas is
 * scaled for display only and never feeds scaled values back into state.
 */

import type { Box, LineStatus } from "../api.js";
import { clampBox, moveBox, resizeBox, type Edge } from "../geometry.js";

const STATUS_COLORS: Record<LineStatus, string> = {
  unprocessed: "#888888",
  ocr_done: "#1565c0",
  corrected: "#2e7d32",
};

export interface OverlayBox {
  box: Box;
  status: LineStatus;
  selected: boolean;
}

export interface BoxOverlayOptions {
  pageWidth: number;
  pageHeight: number;
  onChange: (boxes: Box[]) => void;
  onSelect: (index: number) => void;
}

const HANDLE_PX = 6;

export class BoxOverlay {
  private boxes: OverlayBox[] = [];
  private image: HTMLImageElement | null = null;
  private drag: { index: number; edge: Edge | "move"; lastX: number; lastY: number } | null =
    null;

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly options: BoxOverlayOptions,
  ) {
    canvas.addEventListener("pointerdown", (e) => this.onPointerDown(e));
    canvas.addEventListener("pointermove", (e) => this.onPointerMove(e));
    canvas.addEventListener("pointerup", () => (this.drag = null));
    canvas.addEventListener("pointerleave", () => (this.drag = null));
  }

  setImage(image: HTMLImageElement): void {
    this.image = image;
    this.render();
  }

  setBoxes(boxes: OverlayBox[]): void {
    this.boxes = boxes.map((b) => ({ ...b, box: { ...b.box } }));
    this.render();
  }

  /** Map a canvas event position to page-image pixels. */
  private toPagePoint(e: PointerEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    const sx = this.options.pageWidth / rect.width;
    const sy = this.options.pageHeight / rect.height;
    return { x: (e.clientX - rect.left) * sx, y: (e.clientY - rect.top) * sy };
  }

  private hit(x: number, y: number): { index: number; edge: Edge | "move" } | null {
    for (let i = this.boxes.length - 1; i >= 0; i--) {
      const b = this.boxes[i].box;
      const within =
        x >= b.x - HANDLE_PX &&
        x <= b.x + b.width + HANDLE_PX &&
        y >= b.y - HANDLE_PX &&
        y <= b.y + b.height + HANDLE_PX;
      if (!within) continue;
      if (Math.abs(x - b.x) <= HANDLE_PX) return { index: i, edge: "left" };
      if (Math.abs(x - (b.x + b.width)) <= HANDLE_PX) return { index: i, edge: "right" };
      if (Math.abs(y - b.y) <= HANDLE_PX) return { index: i, edge: "top" };
      if (Math.abs(y - (b.y + b.height)) <= HANDLE_PX) return { index: i, edge: "bottom" };
      return { index: i, edge: "move" };
    }
    return null;
  }

  private onPointerDown(e: PointerEvent): void {
    const p = this.toPagePoint(e);
    const hit = this.hit(p.x, p.y);
    if (!hit) return;
    this.drag = { index: hit.index, edge: hit.edge, lastX: p.x, lastY: p.y };
    this.options.onSelect(hit.index);
  }

  private onPointerMove(e: PointerEvent): void {
    if (!this.drag) return;
    const p = this.toPagePoint(e);
    const dx = Math.round(p.x - this.drag.lastX);
    const dy = Math.round(p.y - this.drag.lastY);
    if (dx === 0 && dy === 0) return;
    this.drag.lastX = p.x;
    this.drag.lastY = p.y;
    const { pageWidth, pageHeight } = this.options;
    const target = this.boxes[this.drag.index];
    if (this.drag.edge === "move") {
      target.box = moveBox(target.box, dx, dy, pageWidth, pageHeight);
    } else {
      const delta =
        this.drag.edge === "left" || this.drag.edge === "right" ? dx : dy;
      target.box = resizeBox(target.box, this.drag.edge, delta, pageWidth, pageHeight);
    }
    target.box = clampBox(target.box, pageWidth, pageHeight);
    this.render();
    this.options.onChange(this.boxes.map((b) => ({ ...b.box })));
  }

  private render(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const sx = this.canvas.width / this.options.pageWidth;
    const sy = this.canvas.height / this.options.pageHeight;
    if (this.image) {
      ctx.drawImage(this.image, 0, 0, this.canvas.width, this.canvas.height);
    }
    for (const { box, status, selected } of this.boxes) {
      ctx.lineWidth = selected ? 3 : 1.5;
      ctx.strokeStyle = STATUS_COLORS[status];
      ctx.strokeRect(box.x * sx, box.y * sy, box.width * sx, box.height * sy);
    }
  }
}
