/**
 * Text helpers for the transcript editor: NFC normalization (all displayed
 * polytonic text is NFC) and a character-level diff for highlighting how the
 * corrected text departs from the OCR output.
 */

export function toNFC(text: string): string {
  return text.normalize("NFC");
}

export interface DiffSegment {
  kind: "equal" | "insert" | "delete";
  text: string;
}

/**
 * Character-level diff between the OCR text and the corrected text, computed
 * on NFC code points. "insert" segments exist only in the corrected text,
 * "delete" segments only in the OCR text.
 */
export function diffSegments(ocrText: string, correctedText: string): DiffSegment[] {
  const a = Array.from(toNFC(ocrText));
  const b = Array.from(toNFC(correctedText));
  // LCS table; transcripts are single lines so the quadratic cost is fine.
  const m = a.length;
  const n = b.length;
  const lcs: number[][] = Array.from({ length: m + 1 }, () =>
    new Array<number>(n + 1).fill(0),
  );
  for (let i = m - 1; i >= 0; i--) {
    for (let j = n - 1; j >= 0; j--) {
      lcs[i][j] =
        a[i] === b[j]
          ? lcs[i + 1][j + 1] + 1
          : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const out: DiffSegment[] = [];
  const push = (kind: DiffSegment["kind"], text: string) => {
    if (!text) return;
    const last = out[out.length - 1];
    if (last && last.kind === kind) last.text += text;
    else out.push({ kind, text });
  };
  let i = 0;
  let j = 0;
  while (i < m && j < n) {
    if (a[i] === b[j]) {
      push("equal", a[i]);
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      push("delete", a[i]);
      i++;
    } else {
      push("insert", b[j]);
      j++;
    }
  }
  while (i < m) push("delete", a[i++]);
  while (j < n) push("insert", b[j++]);
  return out;
}

/** Reassemble a diff back into (ocr, corrected) — used as a self-check. */
export function diffSides(segments: DiffSegment[]): [string, string] {
  let ocr = "";
  let corrected = "";
  for (const seg of segments) {
    if (seg.kind !== "insert") ocr += seg.text;
    if (seg.kind !== "delete") corrected += seg.text;
  }
  return [ocr, corrected];
}
