import { RenderScheduler, FrameSink } from "./scheduler.js";
import {
  ViewLimits,
  ViewState,
  clampState,
  defaultLimits,
  initialState,
} from "./state.js";
import { applyDrag, applyWheel } from "./orbit.js";
import { ParamInfo, RenderTransport, ServiceInfo } from "./types.js";

export interface SliderSpec {
  name: string;
  lo: number;
  hi: number;
  value: number;
}

/**
 * Headless explorer core: owns the view state and turns interactions into
 * scheduled render requests.  The DOM layer (main.ts) is a thin shell over
 * this class, which is what the scripted interaction tests drive.
 */
export class Explorer {
  readonly info: ServiceInfo;
  readonly limits: ViewLimits;
  readonly scheduler: RenderScheduler;
  state: ViewState;
  private dragging = false;

  private constructor(info: ServiceInfo, transport: RenderTransport,
                      sink: FrameSink, debounceMs: number, resolution: number) {
    this.info = info;
    this.limits = defaultLimits(info.params, info.max_size ?? 1024);
    this.state = initialState(this.limits, resolution);
    this.scheduler = new RenderScheduler(transport, this.limits, sink, debounceMs);
  }

  /** Fetch /info, build the parameter model, and request the first frame. */
  static async create(transport: RenderTransport, sink: FrameSink,
                      debounceMs = 80, resolution = 256): Promise<Explorer> {
    const info = await transport.info();
    const explorer = new Explorer(info, transport, sink, debounceMs, resolution);
    explorer.scheduler.request(explorer.state, false, true);
    return explorer;
  }

  /** One slider per scene parameter, ranges straight from /info. */
  sliders(): SliderSpec[] {
    return this.info.params.map((p: ParamInfo, i: number) => ({
      name: p.name,
      lo: p.lo,
      hi: p.hi,
      value: this.state.params[i],
    }));
  }

  private apply(next: ViewState, preview: boolean, immediate = false): void {
    this.state = clampState(next, this.limits);
    this.scheduler.request(this.state, preview, immediate);
  }

  setParam(index: number, value: number, final = false): void {
    const params = [...this.state.params];
    params[index] = value;
    this.apply({ ...this.state, params }, !final, final);
  }

  beginDrag(): void {
    this.dragging = true;
  }

  drag(dxPixels: number, dyPixels: number): void {
    if (!this.dragging) return;
    this.apply(applyDrag(this.state, dxPixels, dyPixels), true);
  }

  endDrag(): void {
    if (!this.dragging) return;
    this.dragging = false;
    this.apply(this.state, false, true); // full-resolution frame on release
  }

  wheel(deltaY: number): void {
    this.apply(applyWheel(this.state, deltaY), true);
  }

  setResolution(size: number): void {
    this.apply({ ...this.state, resolution: size }, false, true);
  }
}
