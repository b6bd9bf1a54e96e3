/** The log-space action-to-stiffness mapping, mirrored from the controller
 * so the sliders can display the stiffness they will command. */

export function clampAction(a: number): number {
  return Math.min(1, Math.max(-1, a));
}

/** Stiffness diagonal (kp1, kp2, kp3, kr1, kr2, kr3) for a 6-action. */
export function actionToGains(actions: number[]): number[] {
  if (actions.length !== 6) throw new Error('action must have 6 components');
  const a = actions.map(clampAction);
  return [
    Math.pow(10, a[0] + 2.5),
    Math.pow(10, a[1] + 2.5),
    Math.pow(10, 1.5 * a[2] + 2.0),
    Math.pow(10, 0.6 * a[3] + 2.0),
    Math.pow(10, 0.6 * a[4] + 2.0),
    Math.pow(10, 0.6 * a[5] + 2.0),
  ];
}

/** Fixed damping rule: 8 * sqrt(stiffness), shown next to each slider. */
export function dampingFromGains(gains: number[]): number[] {
  return gains.map((k) => 8 * Math.sqrt(k));
}

export const AXIS_LABELS = ['kp x', 'kp y', 'kp z', 'kr x', 'kr y', 'kr z'];

export function formatStiffness(value: number): string {
  if (value >= 1000) return value.toFixed(0);
  if (value >= 100) return value.toFixed(1);
  return value.toFixed(2);
}
