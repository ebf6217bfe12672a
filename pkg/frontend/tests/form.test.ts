import { describe, expect, it } from "vitest";

import {
  buildPayload,
  cycleGrade,
  formFromAnnotation,
  freshForm,
  gradesDisabled,
  impliedTier,
  setGrade,
  toggleGadolinium,
  toggleSr,
} from "../src/form.js";

describe("form state machine", () => {
  it("starts clean with grade 0 everywhere", () => {
    const state = freshForm("img1");
    expect(state.dirty).toBe(false);
    expect(state.straightReject).toBe(false);
    expect([state.motion, state.contrast, state.noise]).toEqual([0, 0, 0]);
  });

  it("disables grade and gadolinium controls while SR is on", () => {
    let state = freshForm("img1");
    expect(gradesDisabled(state)).toBe(false);
    state = toggleSr(state);
    expect(gradesDisabled(state)).toBe(true);
    // inert controls: attempted edits do not change state
    expect(toggleGadolinium(state)).toBe(state);
    expect(cycleGrade(state, "motion")).toBe(state);
    expect(setGrade(state, "noise", 2)).toBe(state);
  });

  it("cycles grades 0 -> 1 -> 2 -> 0 and marks dirty", () => {
    let state = freshForm("img1");
    state = cycleGrade(state, "contrast");
    expect(state.contrast).toBe(1);
    expect(state.dirty).toBe(true);
    state = cycleGrade(state, "contrast");
    expect(state.contrast).toBe(2);
    state = cycleGrade(state, "contrast");
    expect(state.contrast).toBe(0);
  });

  it("never emits a payload with grades for a straight-rejected image", () => {
    let state = freshForm("img1");
    state = setGrade(state, "motion", 2);
    state = toggleGadolinium(state);
    state = toggleSr(state); // SR after editing grades
    const payload = buildPayload(state, "alice");
    expect(payload.straight_reject).toBe(true);
    expect(payload.grades).toBeUndefined();
    expect(payload.gadolinium).toBeUndefined();
  });

  it("emits grades and gadolinium for non-SR images", () => {
    let state = freshForm("img1");
    state = setGrade(state, "noise", 1);
    const payload = buildPayload(state, "bob");
    expect(payload).toMatchObject({
      rater_id: "bob",
      straight_reject: false,
      gadolinium: false,
      grades: { motion: 0, contrast: 0, noise: 1 },
    });
  });

  it("derives the implied tier from the grade rule", () => {
    let state = freshForm("img1");
    expect(impliedTier(state)).toBe(1);
    state = setGrade(state, "motion", 1);
    expect(impliedTier(state)).toBe(2);
    state = setGrade(state, "noise", 2);
    expect(impliedTier(state)).toBe(3);
    expect(impliedTier(toggleSr(state))).toBeNull();
  });

  it("round-trips a stored annotation into form state", () => {
    const state = formFromAnnotation({
      image_id: "img9",
      rater_id: "alice",
      straight_reject: false,
      gadolinium: true,
      grades: { motion: 2, contrast: 0, noise: 1 },
      timestamp: "",
    });
    expect(state.imageId).toBe("img9");
    expect(state.gadolinium).toBe(true);
    expect(state.motion).toBe(2);
    expect(state.dirty).toBe(false);
  });
});
