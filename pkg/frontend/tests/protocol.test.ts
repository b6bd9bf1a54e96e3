import { describe, expect, it } from 'vitest';
import { encodeCommand, parseServerFrame } from '../src/protocol.js';
import { telemetryFixture } from './fixtures.js';

describe('server frame parsing', () => {
  it('round-trips a telemetry frame', () => {
    const frame = telemetryFixture();
    const parsed = parseServerFrame(JSON.stringify(frame));
    expect(parsed).toEqual(frame);
  });

  it('parses acks and errors', () => {
    expect(parseServerFrame('{"type":"ack","command":"set_gains","tick":41}')).toEqual({
      type: 'ack',
      command: 'set_gains',
      tick: 41,
    });
    expect(parseServerFrame('{"type":"error","message":"boom"}')).toEqual({
      type: 'error',
      message: 'boom',
    });
  });

  it('rejects malformed frames instead of guessing', () => {
    expect(parseServerFrame('not json')).toBeNull();
    expect(parseServerFrame('{"type":"telemetry","tick":1}')).toBeNull();
    expect(parseServerFrame('{"type":"ack","command":"x"}')).toBeNull();
    expect(parseServerFrame('{"type":"mystery"}')).toBeNull();
    const short = telemetryFixture();
    (short as unknown as { e_g: number[] }).e_g = [1, 2, 3];
    expect(parseServerFrame(JSON.stringify(short))).toBeNull();
  });

  it('encodes client commands verbatim', () => {
    expect(JSON.parse(encodeCommand({ type: 'set_gains', actions: [1, 0, -1, 0, 0, 0] }))).toEqual({
      type: 'set_gains',
      actions: [1, 0, -1, 0, 0, 0],
    });
    expect(JSON.parse(encodeCommand({ type: 'reset', case: 'case3' }))).toEqual({
      type: 'reset',
      case: 'case3',
    });
  });
});
