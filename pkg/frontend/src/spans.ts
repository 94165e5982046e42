// Character-range helpers for highlight annotation.
//
// Offsets always refer to the raw utterance string received from the
// service, never to rendered DOM positions, so spans stay stable under
// styling changes.

import type { CharRange } from "./api";

export function mergeRanges(ranges: CharRange[]): CharRange[] {
  const valid = ranges.filter((r) => r.end > r.start);
  if (valid.length === 0) return [];
  const sorted = [...valid].sort((a, b) => a.start - b.start || a.end - b.end);
  const merged: CharRange[] = [{ ...sorted[0] }];
  for (const range of sorted.slice(1)) {
    const last = merged[merged.length - 1];
    if (range.start <= last.end) {
      // overlapping or touching drag selections collapse into one span
      last.end = Math.max(last.end, range.end);
    } else {
      merged.push({ ...range });
    }
  }
  return merged;
}

export function clampRange(range: CharRange, textLength: number): CharRange | null {
  const start = Math.max(0, Math.min(range.start, textLength));
  const end = Math.max(0, Math.min(range.end, textLength));
  return end > start ? { start, end } : null;
}

/**
 * Map a DOM selection range to offsets in the raw utterance string.
 *
 * The tutor text must be rendered as the sole text node of `container`
 * (the renderer guarantees this), so node offsets are string offsets.
 */
export function selectionToRange(
  container: { firstChild: unknown },
  domRange: {
    startContainer: unknown;
    endContainer: unknown;
    startOffset: number;
    endOffset: number;
  },
): CharRange | null {
  const textNode = container.firstChild;
  if (!textNode) return null;
  if (domRange.startContainer !== textNode || domRange.endContainer !== textNode) {
    return null; // selection leaked outside the utterance text
  }
  if (domRange.endOffset <= domRange.startOffset) return null;
  return { start: domRange.startOffset, end: domRange.endOffset };
}
