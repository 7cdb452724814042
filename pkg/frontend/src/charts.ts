/** Tiny canvas line charts for the alpha and DSC trends. */

export interface TrendPoint {
  step: number;
  value: number;
  /** optional secondary marker (alpha* on the alpha chart) */
  marker?: number;
}

export class TrendChart {
  private points: TrendPoint[] = [];

  constructor(
    private readonly canvas: HTMLCanvasElement,
    private readonly label: string,
    private readonly lineColor: string,
    private readonly markerColor: string,
  ) {}

  add(point: TrendPoint): void {
    this.points.push(point);
    this.draw();
  }

  reset(): void {
    this.points = [];
    this.draw();
  }

  draw(): void {
    const ctx = this.canvas.getContext("2d")!;
    const { width, height } = this.canvas;
    ctx.clearRect(0, 0, width, height);
    ctx.fillStyle = "#1b1e24";
    ctx.fillRect(0, 0, width, height);

    const padL = 26;
    const padB = 14;
    const plotW = width - padL - 6;
    const plotH = height - padB - 16;
    const maxStep = Math.max(9, ...this.points.map((p) => p.step));
    const x = (step: number) => padL + (step / maxStep) * plotW;
    const y = (v: number) => 12 + (1 - v) * plotH;

    ctx.strokeStyle = "#3a3f4a";
    ctx.lineWidth = 1;
    for (const tick of [0, 0.5, 1]) {
      ctx.beginPath();
      ctx.moveTo(padL, y(tick));
      ctx.lineTo(width - 6, y(tick));
      ctx.stroke();
      ctx.fillStyle = "#8a93a3";
      ctx.font = "9px sans-serif";
      ctx.fillText(tick.toFixed(1), 4, y(tick) + 3);
    }
    ctx.fillStyle = "#c7cedb";
    ctx.font = "10px sans-serif";
    ctx.fillText(this.label, padL, 9);

    if (this.points.length > 0) {
      ctx.strokeStyle = this.lineColor;
      ctx.lineWidth = 1.5;
      ctx.beginPath();
      this.points.forEach((p, i) => {
        if (i === 0) ctx.moveTo(x(p.step), y(p.value));
        else ctx.lineTo(x(p.step), y(p.value));
      });
      ctx.stroke();
      ctx.fillStyle = this.markerColor;
      for (const p of this.points) {
        if (p.marker !== undefined) {
          ctx.beginPath();
          ctx.arc(x(p.step), y(p.marker), 2.5, 0, Math.PI * 2);
          ctx.fill();
        }
      }
    }
  }
}
