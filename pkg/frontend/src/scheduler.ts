/** Serialized request pipeline: debounced slider changes, at most one
 * request in flight, and sequence-numbered stale-response rejection. A
 * response is applied only if no newer request was issued while it flew. */

export const DEBOUNCE_MS = 150;

export interface SchedulerHooks<T> {
  /** Issue the network call for the current state; seq identifies it. */
  send: (seq: number) => Promise<T>;
  /** Apply a winning (non-stale) response. */
  apply: (seq: number, result: T) => void;
  /** Surface a failure without blocking the viewer. */
  onError?: (seq: number, err: unknown) => void;
}

export class RequestScheduler<T> {
  private seq = 0;          // newest requested state
  private appliedSeq = 0;   // newest rendered state
  private inflightSeq: number | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private hooks: SchedulerHooks<T>,
    private debounceMs: number = DEBOUNCE_MS,
  ) {}

  /** Debounced request (slider drags). Each call supersedes older ones. */
  request(): number {
    const seq = ++this.seq;
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.launch();
    }, this.debounceMs);
    return seq;
  }

  /** Immediate request (ROI release, toggles). Still sequence-checked. */
  requestNow(): number {
    const seq = ++this.seq;
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    this.launch();
    return seq;
  }

  get pending(): boolean {
    return this.timer !== null || this.inflightSeq !== null;
  }

  get lastApplied(): number {
    return this.appliedSeq;
  }

  private launch(): void {
    if (this.inflightSeq !== null) return; // picked up on completion
    const seq = this.seq;
    this.inflightSeq = seq;
    this.hooks.send(seq).then(
      (result) => this.settle(seq, () => {
        if (seq > this.appliedSeq) {
          this.appliedSeq = seq;
          this.hooks.apply(seq, result);
        }
      }),
      (err) => this.settle(seq, () => this.hooks.onError?.(seq, err)),
    );
  }

  private settle(seq: number, handle: () => void): void {
    this.inflightSeq = null;
    if (seq === this.seq) {
      handle(); // no newer request: this response wins (or its error shows)
    } else if (this.timer === null) {
      this.launch(); // superseded while in flight: drop it, fetch the latest
    }
    // else: a debounce timer is already counting down for the newer state
  }
}
