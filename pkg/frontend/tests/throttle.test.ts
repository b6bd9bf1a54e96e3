import { describe, expect, it } from 'vitest';
import { GainThrottle } from '../src/throttle.js';

describe('gain command throttle', () => {
  it('sends the first value immediately', () => {
    const t = new GainThrottle(50);
    expect(t.offer([1, 0, 0, 0, 0, 0], 1000)).toEqual([1, 0, 0, 0, 0, 0]);
  });

  it('defers values inside the interval and drains the latest', () => {
    const t = new GainThrottle(50);
    t.offer([1, 0, 0, 0, 0, 0], 1000);
    expect(t.offer([0.5, 0, 0, 0, 0, 0], 1010)).toBeNull();
    expect(t.offer([0.2, 0, 0, 0, 0, 0], 1020)).toBeNull();
    expect(t.drain(1030)).toBeNull();
    expect(t.drain(1051)).toEqual([0.2, 0, 0, 0, 0, 0]);
    expect(t.drain(1060)).toBeNull(); // nothing pending
  });

  it('never exceeds one emission per interval', () => {
    const t = new GainThrottle(50);
    const sent: number[] = [];
    let now = 0;
    for (let i = 0; i < 500; i++) {
      now += 5;
      if (t.offer([i, 0, 0, 0, 0, 0], now)) sent.push(now);
      const d = t.drain(now);
      if (d) sent.push(now);
    }
    for (let i = 1; i < sent.length; i++) {
      expect(sent[i] - sent[i - 1]).toBeGreaterThanOrEqual(50);
    }
    expect(sent.length).toBeGreaterThan(40); // ~20 Hz over 2.5 s
  });
});
