/** Trailing-edge debouncer: rapid calls inside the window collapse into
 * one invocation of the most recent operation. */

export const DEFAULT_DEBOUNCE_MS = 150;

export class Debouncer {
  private handle: ReturnType<typeof setTimeout> | undefined;

  constructor(private windowMs: number = DEFAULT_DEBOUNCE_MS) {}

  schedule(op: () => void): void {
    if (this.handle !== undefined) clearTimeout(this.handle);
    this.handle = setTimeout(() => {
      this.handle = undefined;
      op();
    }, this.windowMs);
  }

  cancel(): void {
    if (this.handle !== undefined) clearTimeout(this.handle);
    this.handle = undefined;
  }

  get pending(): boolean {
    return this.handle !== undefined;
  }
}
