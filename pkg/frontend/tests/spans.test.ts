import { describe, expect, it } from "vitest";

import { clampRange, mergeRanges, selectionToRange } from "../src/spans";

describe("mergeRanges", () => {
  it("merges overlapping drag selections", () => {
    expect(mergeRanges([{ start: 2, end: 5 }, { start: 4, end: 8 }])).toEqual([
      { start: 2, end: 8 },
    ]);
  });

  it("merges touching selections", () => {
    expect(mergeRanges([{ start: 0, end: 3 }, { start: 3, end: 6 }])).toEqual([
      { start: 0, end: 6 },
    ]);
  });

  it("keeps disjoint selections apart and sorts them", () => {
    expect(mergeRanges([{ start: 7, end: 9 }, { start: 0, end: 2 }])).toEqual([
      { start: 0, end: 2 },
      { start: 7, end: 9 },
    ]);
  });

  it("drops empty and reversed ranges", () => {
    expect(mergeRanges([{ start: 3, end: 3 }, { start: 5, end: 4 }])).toEqual([]);
  });

  it("matches a coverage oracle on random inputs", () => {
    let seed = 1234567;
    const rand = (n: number) => {
      seed = (seed * 1103515245 + 12345) % 2147483648;
      return seed % n;
    };
    for (let trial = 0; trial < 200; trial++) {
      const ranges = Array.from({ length: rand(6) + 1 }, () => {
        const start = rand(30);
        return { start, end: start + rand(8) };
      });
      const merged = mergeRanges(ranges);
      const covered = new Set<number>();
      for (const r of ranges) for (let i = r.start; i < r.end; i++) covered.add(i);
      const mergedCovered = new Set<number>();
      for (const r of merged) {
        expect(r.end).toBeGreaterThan(r.start);
        for (let i = r.start; i < r.end; i++) mergedCovered.add(i);
      }
      expect([...mergedCovered].sort((a, b) => a - b)).toEqual(
        [...covered].sort((a, b) => a - b),
      );
      // merged ranges are disjoint and non-touching
      for (let i = 1; i < merged.length; i++) {
        expect(merged[i].start).toBeGreaterThan(merged[i - 1].end);
      }
    }
  });
});

describe("clampRange", () => {
  it("clamps to the text length", () => {
    expect(clampRange({ start: 2, end: 99 }, 10)).toEqual({ start: 2, end: 10 });
  });

  it("rejects ranges that collapse", () => {
    expect(clampRange({ start: 12, end: 20 }, 10)).toBeNull();
  });
});

describe("selectionToRange", () => {
  const textNode = { kind: "text" };
  const container = { firstChild: textNode };

  it("maps a same-node selection to string offsets", () => {
    const range = {
      startContainer: textNode,
      endContainer: textNode,
      startOffset: 3,
      endOffset: 7,
    };
    expect(selectionToRange(container, range)).toEqual({ start: 3, end: 7 });
  });

  it("rejects selections leaking outside the utterance", () => {
    const other = { kind: "other" };
    const range = {
      startContainer: other,
      endContainer: textNode,
      startOffset: 0,
      endOffset: 4,
    };
    expect(selectionToRange(container, range)).toBeNull();
  });

  it("rejects collapsed selections", () => {
    const range = {
      startContainer: textNode,
      endContainer: textNode,
      startOffset: 4,
      endOffset: 4,
    };
    expect(selectionToRange(container, range)).toBeNull();
  });
});
