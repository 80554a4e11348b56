/**
 * Box-editing helpers. All coordinates are page-image pixels; nothing here
 * knows about screen scaling, so what the user drags is what gets persisted.
 */

import type { Box } from "./api.js";

/** Clamp a box so it lies fully inside a pageWidth x pageHeight page. */
export function clampBox(box: Box, pageWidth: number, pageHeight: number): Box {
  const width = Math.max(1, Math.min(Math.round(box.width), pageWidth));
  const height = Math.max(1, Math.min(Math.round(box.height), pageHeight));
  const x = Math.max(0, Math.min(Math.round(box.x), pageWidth - width));
  const y = Math.max(0, Math.min(Math.round(box.y), pageHeight - height));
  return { x, y, width, height };
}

/** Translate a box by (dx, dy), clamped to the page. */
export function moveBox(
  box: Box,
  dx: number,
  dy: number,
  pageWidth: number,
  pageHeight: number,
): Box {
  return clampBox(
    { ...box, x: box.x + dx, y: box.y + dy },
    pageWidth,
    pageHeight,
  );
}

export type Edge = "left" | "right" | "top" | "bottom";

/** Drag one edge by delta pixels, clamped to the page and to width/height >= 1. */
export function resizeBox(
  box: Box,
  edge: Edge,
  delta: number,
  pageWidth: number,
  pageHeight: number,
): Box {
  let { x, y, width, height } = box;
  switch (edge) {
    case "left": {
      const newX = Math.min(x + delta, x + width - 1);
      width += x - Math.max(0, newX);
      x = Math.max(0, newX);
      break;
    }
    case "right":
      width = Math.max(1, width + delta);
      break;
    case "top": {
      const newY = Math.min(y + delta, y + height - 1);
      height += y - Math.max(0, newY);
      y = Math.max(0, newY);
      break;
    }
    case "bottom":
      height = Math.max(1, height + delta);
      break;
  }
  return clampBox({ x, y, width, height }, pageWidth, pageHeight);
}

/**
 * Split a box into two stacked boxes at a horizontal cut. `at` is the
 * absolute y of the cut; defaults to the vertical midpoint. Throws if the
 * cut would leave either half empty.
 */
export function splitBoxHorizontal(box: Box, at?: number): [Box, Box] {
  const cut = at ?? box.y + Math.floor(box.height / 2);
  if (cut <= box.y || cut >= box.y + box.height) {
    throw new RangeError(
      `split at ${cut} outside box rows ${box.y + 1}..${box.y + box.height - 1}`,
    );
  }
  const top: Box = { x: box.x, y: box.y, width: box.width, height: cut - box.y };
  const bottom: Box = {
    x: box.x,
    y: cut,
    width: box.width,
    height: box.y + box.height - cut,
  };
  return [top, bottom];
}

export function boxesEqual(a: Box, b: Box): boolean {
  return (
    a.x === b.x && a.y === b.y && a.width === b.width && a.height === b.height
  );
}

/** Reading order used throughout the UI: top-to-bottom, then left-to-right. */
export function compareBoxes(a: Box, b: Box): number {
  return a.y - b.y || a.x - b.x;
}
