import { clampState, toRequest, ViewLimits, ViewState } from "./state.js";
import { RenderRequest, RenderTransport } from "./types.js";

export interface FrameSink {
  /** Swap the displayed frame; called only with the newest completed render. */
  onFrame(image: Blob, state: ViewState, preview: boolean): void;
  /** Non-modal error channel; the last good frame stays up. */
  onError(message: string): void;
}

interface PendingWork {
  state: ViewState;
  preview: boolean;
}

/**
 * Serializes render traffic: at most one request in flight, trailing-edge
 * debounce for bursts, and latest-state-wins when interactions outpace the
 * service.  Responses that are older than the newest displayed one are
 * dropped, so the image element never shows a torn or out-of-date frame.
 */
export class RenderScheduler {
  private pending: PendingWork | null = null;
  private inFlight = false;
  private timer: ReturnType<typeof setTimeout> | null = null;
  private seq = 0;
  private displayedSeq = 0;
  requestsSent = 0;

  constructor(
    private transport: RenderTransport,
    private limits: ViewLimits,
    private sink: FrameSink,
    private debounceMs = 80,
  ) {}

  /** Schedule a render for `state`; call with preview=true while dragging. */
  request(state: ViewState, preview = false, immediate = false): void {
    this.pending = { state: clampState(state, this.limits), preview };
    if (immediate || this.debounceMs <= 0) {
      this.cancelTimer();
      void this.pump();
      return;
    }
    if (this.timer === null) {
      this.timer = setTimeout(() => {
        this.timer = null;
        void this.pump();
      }, this.debounceMs);
    }
  }

  /** True when no request is running or queued (test synchronization). */
  idle(): boolean {
    return !this.inFlight && this.pending === null && this.timer === null;
  }

  private cancelTimer(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
  }

  private async pump(): Promise<void> {
    if (this.inFlight || this.pending === null) return;
    const work = this.pending;
    this.pending = null;
    this.inFlight = true;
    const mySeq = ++this.seq;
    const req: RenderRequest = toRequest(work.state, work.preview);
    this.requestsSent += 1;
    try {
      const image = await this.transport.render(req);
      if (mySeq > this.displayedSeq) {
        this.displayedSeq = mySeq;
        this.sink.onFrame(image, work.state, work.preview);
      }
    } catch (err) {
      this.sink.onError(err instanceof Error ? err.message : String(err));
    } finally {
      this.inFlight = false;
      if (this.pending !== null) {
        this.cancelTimer();
        void this.pump(); // latest state wins
      }
    }
  }
}
