import { TelemetryFrame } from '../src/protocol.js';

export function telemetryFixture(overrides: Partial<TelemetryFrame> = {}): TelemetryFrame {
  return {
    type: 'telemetry',
    tick: 200,
    t: 0.2,
    pose: { p: [0.5, 0, 0.19], q: [1, 0, 0, 0] },
    e_g: [0, 0, 0.08, 0, 0, 0],
    f_ext: [0, 0, 0, 0, 0, 0],
    gains: [316.2, 316.2, 100, 100, 100, 100],
    action: [0, 0, 0, 0, 0, 0],
    reward: -0.1,
    recording: false,
    success: false,
    in_contact: false,
    ...overrides,
  };
}
