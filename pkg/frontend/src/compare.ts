/** Side-by-side comparison with synchronized pan/zoom.
 *
 * One transform state drives both panes, so zooming or dragging either
 * image mirrors exactly onto the other.
 */

export interface ViewTransform {
  scale: number;
  x: number;
  y: number;
}

export class SyncView {
  transform: ViewTransform = { scale: 1, x: 0, y: 0 };
  private targets: HTMLElement[] = [];

  attach(el: HTMLElement): void {
    this.targets.push(el);
    this.apply();
  }

  reset(): void {
    this.transform = { scale: 1, x: 0, y: 0 };
    this.apply();
  }

  zoom(factor: number, originX = 0, originY = 0): void {
    const t = this.transform;
    const next = Math.min(16, Math.max(0.25, t.scale * factor));
    const ratio = next / t.scale;
    // keep the zoom origin fixed in view space
    t.x = originX - (originX - t.x) * ratio;
    t.y = originY - (originY - t.y) * ratio;
    t.scale = next;
    this.apply();
  }

  pan(dx: number, dy: number): void {
    this.transform.x += dx;
    this.transform.y += dy;
    this.apply();
  }

  private apply(): void {
    const { scale, x, y } = this.transform;
    const css = `translate(${x}px, ${y}px) scale(${scale})`;
    for (const el of this.targets) {
      el.style.transform = css;
      el.style.transformOrigin = "0 0";
    }
  }
}

export function downloadBlob(blob: Blob, filename: string): void {
  const url = URL.createObjectURL(blob);
  const a = document.createElement("a");
  a.href = url;
  a.download = filename;
  a.click();
  URL.revokeObjectURL(url);
}
