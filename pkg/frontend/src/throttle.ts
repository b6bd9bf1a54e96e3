/** Rate limiter for slider commands: leading edge plus the latest trailing
 * value, never exceeding one emission per interval. */

export class GainThrottle {
  private lastSent = -Infinity;
  private pendingValue: number[] | null = null;

  constructor(private readonly intervalMs: number) {}

  /** Offer a new value; returns it if it should be sent immediately. */
  offer(actions: number[], now: number): number[] | null {
    if (now - this.lastSent >= this.intervalMs) {
      this.lastSent = now;
      this.pendingValue = null;
      return actions;
    }
    this.pendingValue = actions;
    return null;
  }

  /** Poll for a deferred trailing value once the interval has elapsed. */
  drain(now: number): number[] | null {
    if (this.pendingValue !== null && now - this.lastSent >= this.intervalMs) {
      const value = this.pendingValue;
      this.pendingValue = null;
      this.lastSent = now;
      return value;
    }
    return null;
  }
}
