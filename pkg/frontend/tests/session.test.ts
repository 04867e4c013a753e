import { describe, expect, it } from "vitest";

import {
  RequestSequencer,
  SessionState,
  clampUnit,
  normalizeSimplex,
  oneHot,
} from "../src/session.js";

function blob(tag: string): Blob {
  return new Blob([tag], { type: "image/png" });
}

describe("RequestSequencer", () => {
  it("issues increasing sequence numbers", () => {
    const s = new RequestSequencer();
    expect([s.issue(), s.issue(), s.issue()]).toEqual([0, 1, 2]);
  });

  it("rejects responses older than the displayed one", () => {
    const s = new RequestSequencer();
    const a = s.issue();
    const b = s.issue();
    expect(s.accept(b)).toBe(true); // later request lands first
    expect(s.accept(a)).toBe(false); // stale response discarded
  });
});

describe("SessionState", () => {
  it("initializes sliders one-hot on the first style", () => {
    const st = new SessionState();
    st.initStyles(3);
    expect(st.sliders).toEqual([1, 0, 0]);
  });

  it("clamps slider values into [0,1]", () => {
    const st = new SessionState();
    st.initStyles(2);
    st.setSlider(0, 1.7);
    st.setSlider(1, -0.4);
    expect(st.currentZ()).toEqual([1, 0]);
  });

  it("normalize toggle produces convex combinations", () => {
    const st = new SessionState();
    st.initStyles(2);
    st.setSlider(0, 0.5);
    st.setSlider(1, 0.5);
    st.normalize = true;
    expect(st.currentZ()).toEqual([0.5, 0.5]);
    st.setSlider(0, 1.0);
    st.setSlider(1, 1.0);
    expect(st.currentZ()).toEqual([0.5, 0.5]);
  });

  it("an artificially delayed response is never displayed", async () => {
    const st = new SessionState();
    st.initStyles(2);

    // request 0 (slow) then request 1 (fast): the fast one finishes
    // first; the slow response must be rejected when it arrives
    const seqSlow = st.sequencer.issue();
    const seqFast = st.sequencer.issue();

    const fastDone = st.recordResult(seqFast, [0, 1], blob("fast"));
    expect(fastDone).toBe(true);

    await new Promise((r) => setTimeout(r, 5)); // delayed network reply
    const slowDone = st.recordResult(seqSlow, [1, 0], blob("slow"));
    expect(slowDone).toBe(false);

    expect(st.history).toHaveLength(1);
    expect(st.latest()!.z).toEqual([0, 1]);
  });

  it("displayed z always matches the displayed image", () => {
    const st = new SessionState();
    st.initStyles(3);
    const pairs: Array<[number[], string]> = [
      [[1, 0, 0], "a"],
      [[0.4, 0.6, 0], "b"],
      [[0, 0, 1], "c"],
    ];
    for (const [z, tag] of pairs) {
      const seq = st.sequencer.issue();
      st.recordResult(seq, z, blob(tag));
    }
    const last = st.latest()!;
    expect(last.z).toEqual([0, 0, 1]);
    expect(st.sequencer.displayedSeq).toBe(last.seq);
  });

  it("history entries are immutable once recorded", () => {
    const st = new SessionState();
    st.initStyles(2);
    st.recordResult(st.sequencer.issue(), [1, 0], blob("x"));
    const entry = st.latest()!;
    expect(Object.isFrozen(entry)).toBe(true);
    expect(Object.isFrozen(entry.z)).toBe(true);
    expect(() => {
      (entry.z as number[])[0] = 9;
    }).toThrow();
  });
});

describe("helpers", () => {
  it("oneHot", () => {
    expect(oneHot(3, 1)).toEqual([0, 1, 0]);
  });

  it("clampUnit", () => {
    expect(clampUnit([-1, 0.5, 2])).toEqual([0, 0.5, 1]);
  });

  it("normalizeSimplex leaves all-zero untouched", () => {
    expect(normalizeSimplex([0, 0])).toEqual([0, 0]);
  });
});
