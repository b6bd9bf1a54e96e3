/** Pure state model for the console: every screen-visible quantity derives
 * from telemetry frames or acknowledged commands, never from local guesses.
 */

import { AckFrame, ErrorFrame, TelemetryFrame } from './protocol.js';
import { clampAction } from './gains.js';

export type ConnectionStatus = 'connecting' | 'connected' | 'stalled' | 'disconnected';

export const STALL_AFTER_MS = 500;

export interface ConsoleState {
  status: ConnectionStatus;
  frame: TelemetryFrame | null;
  lastFrameAt: number | null;
  sliders: number[];
  recording: boolean; // acknowledged server state only
  sceneCase: string;
  lastError: string | null;
  savedPath: string | null;
  savedCount: number | null;
  recordCount: number;
}

export function initialState(): ConsoleState {
  return {
    status: 'connecting',
    frame: null,
    lastFrameAt: null,
    sliders: [0, 0, 0, 0, 0, 0],
    recording: false,
    sceneCase: 'default',
    lastError: null,
    savedPath: null,
    savedCount: null,
    recordCount: 0,
  };
}

export type ConsoleEvent =
  | { kind: 'open' }
  | { kind: 'close' }
  | { kind: 'telemetry'; frame: TelemetryFrame; now: number }
  | { kind: 'ack'; frame: AckFrame }
  | { kind: 'error'; frame: ErrorFrame }
  | { kind: 'clock'; now: number }
  | { kind: 'slider'; index: number; value: number }
  | { kind: 'case'; value: string };

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.kind) {
    case 'open':
      return { ...state, status: 'connected', lastError: null };
    case 'close':
      return { ...state, status: 'disconnected' };
    case 'telemetry': {
      const recordCount = event.frame.recording ? state.recordCount + 1 : state.recordCount;
      return {
        ...state,
        status: 'connected',
        frame: event.frame,
        lastFrameAt: event.now,
        recordCount,
      };
    }
    case 'ack': {
      const next = { ...state };
      if (event.frame.command === 'start_recording') {
        next.recording = true;
        next.recordCount = 0;
      } else if (event.frame.command === 'stop_recording') {
        next.recording = false;
      } else if (event.frame.command === 'save') {
        next.savedPath = event.frame.path ?? null;
        next.savedCount = event.frame.count ?? null;
      } else if (event.frame.command === 'reset') {
        next.recordCount = 0;
      }
      return next;
    }
    case 'error':
      return { ...state, lastError: event.frame.message };
    case 'clock': {
      if (
        state.status === 'connected' &&
        state.lastFrameAt !== null &&
        event.now - state.lastFrameAt > STALL_AFTER_MS
      ) {
        return { ...state, status: 'stalled' };
      }
      return state;
    }
    case 'slider': {
      const sliders = state.sliders.slice();
      sliders[event.index] = clampAction(event.value);
      return { ...state, sliders };
    }
    case 'case':
      return { ...state, sceneCase: event.value };
  }
}

/** Insertion depth below the mouth plane, from the hole-frame axial error. */
export function insertionDepth(frame: TelemetryFrame, holeDepth: number): number {
  return holeDepth - frame.e_g[2];
}
