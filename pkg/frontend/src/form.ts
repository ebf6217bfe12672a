/** Annotation form state machine.
 *
 * Mirrors the server-side invariant: a straight-rejected image carries no
 * gadolinium flag and no grades, so those controls are disabled while the SR
 * toggle is on and the outgoing payload can never violate the rule.
 */

import type { AnnotationPayload, AnnotationRecord } from "./api.js";

export type Grade = 0 | 1 | 2;

export interface FormState {
  imageId: string;
  straightReject: boolean;
  gadolinium: boolean;
  motion: Grade;
  contrast: Grade;
  noise: Grade;
  dirty: boolean;
}

export function freshForm(imageId: string): FormState {
  return {
    imageId,
    straightReject: false,
    gadolinium: false,
    motion: 0,
    contrast: 0,
    noise: 0,
    dirty: false,
  };
}

export function formFromAnnotation(record: AnnotationRecord): FormState {
  return {
    imageId: record.image_id,
    straightReject: record.straight_reject,
    gadolinium: record.gadolinium ?? false,
    motion: (record.grades?.motion ?? 0) as Grade,
    contrast: (record.grades?.contrast ?? 0) as Grade,
    noise: (record.grades?.noise ?? 0) as Grade,
    dirty: false,
  };
}

/** Grade controls and the gadolinium toggle are inert while SR is on. */
export function gradesDisabled(state: FormState): boolean {
  return state.straightReject;
}

export function toggleSr(state: FormState): FormState {
  return { ...state, straightReject: !state.straightReject, dirty: true };
}

export function toggleGadolinium(state: FormState): FormState {
  if (gradesDisabled(state)) return state;
  return { ...state, gadolinium: !state.gadolinium, dirty: true };
}

export function cycleGrade(state: FormState, which: "motion" | "contrast" | "noise"): FormState {
  if (gradesDisabled(state)) return state;
  const next = ((state[which] + 1) % 3) as Grade;
  return { ...state, [which]: next, dirty: true };
}

export function setGrade(
  state: FormState,
  which: "motion" | "contrast" | "noise",
  value: Grade,
): FormState {
  if (gradesDisabled(state)) return state;
  return { ...state, [which]: value, dirty: true };
}

/** Build the submission payload; structurally unable to violate the SR rule. */
export function buildPayload(state: FormState, raterId: string): AnnotationPayload {
  if (state.straightReject) {
    return {
      rater_id: raterId,
      straight_reject: true,
      timestamp: new Date().toISOString(),
    };
  }
  return {
    rater_id: raterId,
    straight_reject: false,
    gadolinium: state.gadolinium,
    grades: { motion: state.motion, contrast: state.contrast, noise: state.noise },
    timestamp: new Date().toISOString(),
  };
}

/** Quality tier implied by the current grades (1 good .. 3 bad), or null for SR. */
export function impliedTier(state: FormState): number | null {
  if (state.straightReject) return null;
  const grades = [state.motion, state.contrast, state.noise];
  if (grades.some((g) => g === 2)) return 3;
  if (grades.every((g) => g === 0)) return 1;
  return 2;
}
