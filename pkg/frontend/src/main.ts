/** Console bootstrap: sliders, status banner, record controls, scene view. */

import { connect } from './client.js';
import { actionToGains, AXIS_LABELS, dampingFromGains, formatStiffness } from './gains.js';
import { encodeCommand, TelemetryFrame } from './protocol.js';
import { sceneForCase, sceneGeometry, Viewport } from './scene.js';
import { GainThrottle } from './throttle.js';
import { ConsoleState, initialState, insertionDepth, reduce, ConsoleEvent } from './viewmodel.js';

const SEND_INTERVAL_MS = 50; // 20 Hz command throttle
const HOLE_DEPTH = 0.04;

const qs = new URLSearchParams(location.search);
const url = qs.get('url') ?? `ws://${location.hostname || '127.0.0.1'}:8765/session`;

let state: ConsoleState = initialState();
const throttle = new GainThrottle(SEND_INTERVAL_MS);

function dispatch(event: ConsoleEvent) {
  state = reduce(state, event);
}

const client = connect(url, {
  onOpen: () => dispatch({ kind: 'open' }),
  onClose: () => dispatch({ kind: 'close' }),
  onFrame: (frame) => {
    if (frame.type === 'telemetry') dispatch({ kind: 'telemetry', frame, now: performance.now() });
    else if (frame.type === 'ack') dispatch({ kind: 'ack', frame });
    else dispatch({ kind: 'error', frame });
  },
});

function sendGains(actions: number[]) {
  client.send(encodeCommand({ type: 'set_gains', actions }));
}

// ---------------------------------------------------------------------------
// DOM

const banner = document.getElementById('banner')!;
const sliderBox = document.getElementById('sliders')!;
const statsBox = document.getElementById('stats')!;
const recordButton = document.getElementById('record') as HTMLButtonElement;
const saveButton = document.getElementById('save') as HTMLButtonElement;
const savePath = document.getElementById('save-path') as HTMLInputElement;
const caseSelect = document.getElementById('case') as HTMLSelectElement;
const resetButton = document.getElementById('reset') as HTMLButtonElement;
const canvas = document.getElementById('scene') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;

const sliderInputs: HTMLInputElement[] = [];
const sliderReadouts: HTMLElement[] = [];
AXIS_LABELS.forEach((label, i) => {
  const row = document.createElement('div');
  row.className = 'slider-row';
  const name = document.createElement('span');
  name.className = 'axis';
  name.textContent = label;
  const input = document.createElement('input');
  input.type = 'range';
  input.min = '-1';
  input.max = '1';
  input.step = '0.01';
  input.value = '0';
  const readout = document.createElement('span');
  readout.className = 'readout';
  input.addEventListener('input', () => {
    dispatch({ kind: 'slider', index: i, value: Number(input.value) });
    const now = performance.now();
    const due = throttle.offer(state.sliders, now);
    if (due) sendGains(due);
  });
  row.append(name, input, readout);
  sliderBox.append(row);
  sliderInputs.push(input);
  sliderReadouts.push(readout);
});

recordButton.addEventListener('click', () => {
  client.send(encodeCommand({ type: state.recording ? 'stop_recording' : 'start_recording' }));
});

saveButton.addEventListener('click', () => {
  client.send(encodeCommand({ type: 'save', path: savePath.value || 'teleop_demo.jsonl' }));
});

resetButton.addEventListener('click', () => {
  dispatch({ kind: 'case', value: caseSelect.value });
  client.send(encodeCommand({ type: 'reset', case: caseSelect.value }));
});

// ---------------------------------------------------------------------------
// render loop (latest-frame buffering: redraws from state, not per message)

function renderBanner() {
  const labels: Record<string, string> = {
    connecting: 'connecting…',
    connected: 'connected',
    stalled: 'stalled (no telemetry > 500 ms)',
    disconnected: 'connection lost, retrying',
  };
  banner.textContent = state.lastError
    ? `${labels[state.status]} / server error: ${state.lastError}`
    : labels[state.status];
  banner.dataset.status = state.status;
}

function renderSliders() {
  const gains = actionToGains(state.sliders);
  const damping = dampingFromGains(gains);
  gains.forEach((k, i) => {
    sliderReadouts[i].textContent =
      `${formatStiffness(k)} ${i < 3 ? 'N/m' : 'N·m/rad'} · kd ${formatStiffness(damping[i])}`;
  });
}

function renderStats(frame: TelemetryFrame | null) {
  if (!frame) {
    statsBox.textContent = 'waiting for telemetry…';
    return;
  }
  const depth = insertionDepth(frame, HOLE_DEPTH);
  statsBox.textContent =
    `t ${frame.t.toFixed(2)} s · depth ${(depth * 1000).toFixed(1)} mm · ` +
    `reward ${frame.reward.toFixed(2)} · |e_G| ${Math.hypot(...frame.e_g).toFixed(4)} · ` +
    `${frame.in_contact ? 'in contact' : 'free'}${frame.success ? ' · INSERTED' : ''}` +
    `${state.recording ? ` · REC (${state.recordCount})` : ''}` +
    `${state.savedPath ? ` · saved ${state.savedCount} records to ${state.savedPath}` : ''}`;
  recordButton.textContent = state.recording ? 'stop recording' : 'start recording';
  saveButton.disabled = state.recordCount === 0 && !state.recording;
}

function renderScene(frame: TelemetryFrame | null) {
  const view: Viewport = {
    width: canvas.width,
    height: canvas.height,
    metersPerPixel: 0.25 / canvas.width,
  };
  ctx.fillStyle = '#14161a';
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  for (const p of sceneGeometry(frame, sceneForCase(state.sceneCase), view)) {
    if (p.kind === 'line') {
      ctx.strokeStyle = p.color;
      ctx.lineWidth = p.width;
      ctx.beginPath();
      ctx.moveTo(p.x1, p.y1);
      ctx.lineTo(p.x2, p.y2);
      ctx.stroke();
    } else if (p.kind === 'circle') {
      ctx.fillStyle = p.color;
      ctx.beginPath();
      ctx.arc(p.x, p.y, p.r, 0, 2 * Math.PI);
      ctx.fill();
    } else {
      ctx.fillStyle = p.color;
      ctx.fillText(p.text, p.x, p.y);
    }
  }
}

function tick() {
  const now = performance.now();
  dispatch({ kind: 'clock', now });
  const trailing = throttle.drain(now);
  if (trailing) sendGains(trailing);
  renderBanner();
  renderSliders();
  renderStats(state.frame);
  renderScene(state.frame);
  requestAnimationFrame(tick);
}

requestAnimationFrame(tick);
