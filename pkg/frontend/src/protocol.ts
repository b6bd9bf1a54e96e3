/** Wire protocol shared with the teleop service: JSON text frames. */

export interface PoseWire {
  p: [number, number, number];
  q: [number, number, number, number]; // (w, x, y, z), w >= 0
}

export interface TelemetryFrame {
  type: 'telemetry';
  tick: number;
  t: number;
  pose: PoseWire;
  e_g: number[];
  f_ext: number[];
  gains: number[];
  action: number[];
  reward: number;
  recording: boolean;
  success: boolean;
  in_contact: boolean;
}

export interface AckFrame {
  type: 'ack';
  command: string;
  tick: number;
  path?: string;
  count?: number;
}

export interface ErrorFrame {
  type: 'error';
  message: string;
  tick?: number;
}

export type ServerFrame = TelemetryFrame | AckFrame | ErrorFrame;

export type ClientCommand =
  | { type: 'set_gains'; actions: number[] }
  | { type: 'start_recording' }
  | { type: 'stop_recording' }
  | { type: 'reset'; case: string }
  | { type: 'save'; path: string };

const isNumberArray = (x: unknown, n: number): x is number[] =>
  Array.isArray(x) && x.length === n && x.every((v) => typeof v === 'number' && Number.isFinite(v));

/** Parse one server frame; returns null for anything malformed. */
export function parseServerFrame(text: string): ServerFrame | null {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof doc !== 'object' || doc === null) return null;
  const frame = doc as Record<string, unknown>;
  switch (frame.type) {
    case 'telemetry': {
      const pose = frame.pose as Record<string, unknown> | undefined;
      if (
        typeof frame.tick !== 'number' ||
        typeof frame.t !== 'number' ||
        !pose ||
        !isNumberArray(pose.p, 3) ||
        !isNumberArray(pose.q, 4) ||
        !isNumberArray(frame.e_g, 6) ||
        !isNumberArray(frame.f_ext, 6) ||
        !isNumberArray(frame.gains, 6) ||
        !isNumberArray(frame.action, 6) ||
        typeof frame.reward !== 'number'
      ) {
        return null;
      }
      return frame as unknown as TelemetryFrame;
    }
    case 'ack':
      if (typeof frame.command !== 'string' || typeof frame.tick !== 'number') return null;
      return frame as unknown as AckFrame;
    case 'error':
      if (typeof frame.message !== 'string') return null;
      return frame as unknown as ErrorFrame;
    default:
      return null;
  }
}

export function encodeCommand(command: ClientCommand): string {
  return JSON.stringify(command);
}
