/** WebSocket client with reconnect/backoff and latest-frame delivery. */

import { parseServerFrame, ServerFrame } from './protocol.js';

export interface SessionCallbacks {
  onFrame: (frame: ServerFrame) => void;
  onOpen: () => void;
  onClose: () => void;
}

export interface SessionClient {
  send(text: string): void;
  close(): void;
}

export const INITIAL_BACKOFF_MS = 500;
export const MAX_BACKOFF_MS = 8000;

export function nextBackoff(current: number): number {
  return Math.min(current * 2, MAX_BACKOFF_MS);
}

export function connect(url: string, callbacks: SessionCallbacks): SessionClient {
  let socket: WebSocket | null = null;
  let closed = false;
  let backoff = INITIAL_BACKOFF_MS;

  const open = () => {
    if (closed) return;
    socket = new WebSocket(url);
    socket.onopen = () => {
      backoff = INITIAL_BACKOFF_MS;
      callbacks.onOpen();
    };
    socket.onmessage = (event) => {
      const frame = parseServerFrame(String(event.data));
      if (frame) callbacks.onFrame(frame);
    };
    socket.onclose = () => {
      callbacks.onClose();
      if (!closed) {
        setTimeout(open, backoff);
        backoff = nextBackoff(backoff);
      }
    };
    socket.onerror = () => {
      socket?.close();
    };
  };
  open();

  return {
    send(text: string) {
      if (socket && socket.readyState === WebSocket.OPEN) socket.send(text);
    },
    close() {
      closed = true;
      socket?.close();
    },
  };
}
