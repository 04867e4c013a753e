/** Session state: slider vector, request sequencing, preview history.
 *
 * Responses are ordered by a sequence number issued at send time; a
 * response is displayed only if no later request has already been
 * displayed, so the shown image always corresponds to the last z the
 * user asked for, even when the network reorders replies.
 */

export interface HistoryEntry {
  readonly seq: number;
  readonly z: readonly number[];
  readonly blob: Blob;
}

export class RequestSequencer {
  private next = 0;
  private displayed = -1;

  issue(): number {
    return this.next++;
  }

  /** True when this response may be shown; marks it displayed. */
  accept(seq: number): boolean {
    if (seq <= this.displayed) return false;
    this.displayed = seq;
    return true;
  }

  get displayedSeq(): number {
    return this.displayed;
  }
}

export function oneHot(count: number, index: number): number[] {
  const z = new Array<number>(count).fill(0);
  z[index] = 1;
  return z;
}

export function clampUnit(z: readonly number[]): number[] {
  return z.map((v) => Math.min(1, Math.max(0, v)));
}

/** Scale to a convex combination when the mass is positive; sliders stay
 * independent otherwise. */
export function normalizeSimplex(z: readonly number[]): number[] {
  const total = z.reduce((a, b) => a + b, 0);
  if (total <= 0) return [...z];
  return z.map((v) => v / total);
}

export class SessionState {
  sliders: number[] = [];
  normalize = false;
  readonly history: HistoryEntry[] = [];
  readonly sequencer = new RequestSequencer();
  compareA: HistoryEntry | null = null;
  compareB: HistoryEntry | null = null;

  initStyles(count: number): void {
    this.sliders = oneHot(count, 0);
  }

  setSlider(index: number, value: number): void {
    this.sliders[index] = Math.min(1, Math.max(0, value));
  }

  /** The z vector a preview request should carry right now. */
  currentZ(): number[] {
    const z = clampUnit(this.sliders);
    return this.normalize ? normalizeSimplex(z) : z;
  }

  /** Record a served preview; returns false for stale responses. */
  recordResult(seq: number, z: readonly number[], blob: Blob): boolean {
    if (!this.sequencer.accept(seq)) return false;
    this.history.push(Object.freeze({ seq, z: Object.freeze([...z]), blob }));
    return true;
  }

  latest(): HistoryEntry | null {
    return this.history.length
      ? this.history[this.history.length - 1]
      : null;
  }
}
