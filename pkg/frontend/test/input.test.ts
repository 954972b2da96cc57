import { describe, expect, it } from "vitest";

import { devicePanel, expectedTcpDirection, DEFAULT_GAINS, OperatorInput } from "../src/input.js";

describe("clutch gate", () => {
  it("produces no waypoints while released", () => {
    const input = new OperatorInput();
    input.drag(50, -20);
    input.lift(3);
    input.setButtons(1);
    for (let t = 0; t < 500; t += 8) {
      expect(input.emit(t)).toBeNull();
    }
  });

  it("engage carries the current virtual pose", () => {
    const input = new OperatorInput();
    input.drag(100, 0);
    const wp = input.engage(0);
    expect(wp.clutch).toBe(true);
    expect(wp.pose.position[0]).toBeCloseTo(0.1, 12);
  });

  it("release produces exactly one clutch=false message", () => {
    const input = new OperatorInput();
    input.engage(0);
    const release = input.release(100);
    expect(release.clutch).toBe(false);
    for (let t = 100; t < 600; t += 8) {
      expect(input.emit(t)).toBeNull();
    }
  });

  it("streams at 60 Hz while held", () => {
    const input = new OperatorInput();
    input.engage(0);
    expect(input.emit(5)).toBeNull();
    const wp = input.emit(17);
    expect(wp).not.toBeNull();
    expect(input.emit(20)).toBeNull();
    let count = 0;
    for (let t = 20; t <= 1020; t += 4) {
      if (input.emit(t)) count++;
    }
    expect(count).toBeGreaterThanOrEqual(58);
    expect(count).toBeLessThanOrEqual(62);
  });

  it("sequence numbers strictly increase", () => {
    const input = new OperatorInput();
    const seqs = [input.engage(0).seq];
    for (let t = 17; t < 200; t += 17) {
      const wp = input.emit(t);
      if (wp) seqs.push(wp.seq);
    }
    seqs.push(input.release(300).seq);
    for (let i = 1; i < seqs.length; i++) expect(seqs[i]).toBeGreaterThan(seqs[i - 1]);
  });
});

describe("pose integration", () => {
  it("drag right 100 px = +0.1 m x at the default gain", () => {
    const input = new OperatorInput();
    input.drag(100, 0);
    expect(input.pose.position[0]).toBeCloseTo(0.1, 12);
    expect(input.pose.position[1]).toBeCloseTo(0, 12);
  });

  it("drag down lowers y (screen up is +y)", () => {
    const input = new OperatorInput();
    input.drag(0, 80);
    expect(input.pose.position[1]).toBeCloseTo(-0.08, 12);
  });

  it("wheel/keys drive z", () => {
    const input = new OperatorInput();
    input.lift(5);
    expect(input.pose.position[2]).toBeCloseTo(0.01, 12);
  });

  it("modifier drag rotates without translating", () => {
    const input = new OperatorInput();
    input.drag(40, 10, true);
    expect(input.pose.position).toEqual([0, 0, 0]);
    expect(Math.abs(1 - input.pose.orientation[0])).toBeGreaterThan(1e-6);
  });

  it("device orientation only applies in that mode", () => {
    const input = new OperatorInput();
    input.deviceOrientation(90, 0, 0);
    expect(input.pose.orientation[0]).toBeCloseTo(1, 12);
    input.mode = "device_orientation";
    input.deviceOrientation(90, 0, 0);
    // rotZ(90 deg): w = cos45, z = sin45
    expect(input.pose.orientation[0]).toBeCloseTo(Math.SQRT1_2, 9);
    expect(Math.abs(input.pose.orientation[3])).toBeCloseTo(Math.SQRT1_2, 9);
  });
});

describe("device panel riding the stream", () => {
  it("queued gripper command goes out once, then holds", () => {
    const input = new OperatorInput();
    input.engage(0);
    input.requestGripper("close");
    const wp1 = input.emit(20)!;
    const wp2 = input.emit(40)!;
    expect(wp1.gripper).toBe("close");
    expect(wp2.gripper).toBe("hold");
  });

  it("held buttons appear on every streamed waypoint until cleared", () => {
    const input = new OperatorInput();
    input.engage(0);
    input.setButtons(1);
    expect(input.emit(20)!.buttons).toBe(1);
    expect(input.emit(40)!.buttons).toBe(1);
    input.setButtons(0);
    expect(input.emit(60)!.buttons).toBe(0);
  });

  it("start button needs clutch, idle phase and a loaded specimen", () => {
    const state = {
      tester_phase: "idle",
      specimen_loaded: true,
      tester_progress: 0,
      last_yield: null,
    };
    expect(devicePanel(state, true).canStart).toBe(true);
    expect(devicePanel(state, false).canStart).toBe(false);
    expect(devicePanel({ ...state, specimen_loaded: false }, true).canStart).toBe(false);
    expect(devicePanel({ ...state, tester_phase: "running" }, true).canStart).toBe(false);
    expect(devicePanel({ ...state, tester_phase: "running" }, true).canReset).toBe(false);
  });

  it("yield label formats the last result", () => {
    const state = {
      tester_phase: "complete",
      specimen_loaded: true,
      tester_progress: 1,
      last_yield: 501.25,
    };
    expect(devicePanel(state, true).yieldLabel).toBe("501.3 N");
  });
});

describe("drag-direction prediction", () => {
  it("identity frames map screen right to +x", () => {
    const dir = expectedTcpDirection(100, 0, DEFAULT_GAINS, [1, 0, 0, 0], [1, 0, 0, 0]);
    expect(dir[0]).toBeCloseTo(0.1, 12);
    expect(dir[1]).toBeCloseTo(0, 12);
  });

  it("engage-frame rotation feeds through", () => {
    // tool frame rotated 180 deg about x: +y operator drag becomes -y in base
    const dir = expectedTcpDirection(0, -100, DEFAULT_GAINS, [1, 0, 0, 0], [0, 1, 0, 0]);
    expect(dir[1]).toBeCloseTo(-0.1, 12);
  });
});
