/**
 * Trailing-edge debounce: the wrapped function runs once, `delayMs` after the
 * last call in a burst. Used to collapse slider drags into a single render
 * request.
 */
export function debounce<A extends unknown[]>(
  fn: (...args: A) => void,
  delayMs: number,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) {
      clearTimeout(timer);
    }
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, delayMs);
  };
}

/**
 * Keeps at most one async task in flight. A request arriving while one runs
 * is coalesced into a single follow-up run once the current task settles.
 */
export class SingleFlight {
  private inFlight = false;
  private pending = false;

  constructor(private readonly task: () => Promise<void>) {}

  request(): void {
    if (this.inFlight) {
      this.pending = true;
      return;
    }
    void this.fire();
  }

  private async fire(): Promise<void> {
    this.inFlight = true;
    try {
      await this.task();
    } finally {
      this.inFlight = false;
      if (this.pending) {
        this.pending = false;
        void this.fire();
      }
    }
  }
}
