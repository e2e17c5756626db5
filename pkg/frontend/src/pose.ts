// Pose records and the small amount of linear algebra the viewer needs.
//
// A pose record mirrors the JSON the registration server reads and writes:
// a 3x3 rotation (row-major), a translation in millimetres, and the camera
// intrinsics the pose was authored against.  All steering happens on these
// records; the server is the only renderer.

export type Vec3 = [number, number, number];
export type Mat3 = [Vec3, Vec3, Vec3];
export type Axis = "x" | "y" | "z";

export interface CameraRecord {
  width: number;
  height: number;
  focal: number;
  cx: number;
  cy: number;
}

export interface PoseRecord {
  format: string;
  version: number;
  rotation: Mat3;
  translation_mm: Vec3;
  camera: CameraRecord;
}

export const POSE_FORMAT = "surfreg-pose";
export const POSE_VERSION = 1;

export const IDENTITY: Mat3 = [
  [1, 0, 0],
  [0, 1, 0],
  [0, 0, 1],
];

const AXIS_INDEX: Record<Axis, number> = { x: 0, y: 1, z: 2 };

export function clonePose(pose: PoseRecord): PoseRecord {
  return {
    format: pose.format,
    version: pose.version,
    rotation: pose.rotation.map((row) => [...row]) as Mat3,
    translation_mm: [...pose.translation_mm] as Vec3,
    camera: { ...pose.camera },
  };
}

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: Mat3 = [
    [0, 0, 0],
    [0, 0, 0],
    [0, 0, 0],
  ];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

/** Rotation by `deg` degrees about one camera axis (right-handed). */
export function axisRotation(axis: Axis, deg: number): Mat3 {
  const rad = (deg * Math.PI) / 180;
  const c = Math.cos(rad);
  const s = Math.sin(rad);
  switch (axis) {
    case "x":
      return [
        [1, 0, 0],
        [0, c, -s],
        [0, s, c],
      ];
    case "y":
      return [
        [c, 0, s],
        [0, 1, 0],
        [-s, 0, c],
      ];
    case "z":
      return [
        [c, -s, 0],
        [s, c, 0],
        [0, 0, 1],
      ];
  }
}

/**
 * Re-orthonormalise a near-rotation matrix (Gram-Schmidt on rows).  Steering
 * composes many small rotations; without this the product would slowly drift
 * away from the orthonormality the server enforces on every written pose.
 */
export function orthonormalize(m: Mat3): Mat3 {
  const dot = (u: Vec3, v: Vec3) => u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
  const scale = (u: Vec3, k: number): Vec3 => [u[0] * k, u[1] * k, u[2] * k];
  const sub = (u: Vec3, v: Vec3): Vec3 => [u[0] - v[0], u[1] - v[1], u[2] - v[2]];

  let r0: Vec3 = [...m[0]] as Vec3;
  r0 = scale(r0, 1 / Math.sqrt(dot(r0, r0)));
  let r1 = sub(m[1], scale(r0, dot(m[1], r0)));
  r1 = scale(r1, 1 / Math.sqrt(dot(r1, r1)));
  // Third row as r0 x r1 keeps the determinant at +1 exactly in intent.
  const r2: Vec3 = [
    r0[1] * r1[2] - r0[2] * r1[1],
    r0[2] * r1[0] - r0[0] * r1[2],
    r0[0] * r1[1] - r0[1] * r1[0],
  ];
  return [r0, r1, r2];
}

/**
 * Rotate the model about its own anchor along a camera-axis direction:
 * the increment is applied in the camera frame (R' = Rot * R) and the
 * translation is untouched, so the model pivots in place on screen.
 */
export function rotatePose(pose: PoseRecord, axis: Axis, deg: number): PoseRecord {
  const next = clonePose(pose);
  next.rotation = orthonormalize(matMul(axisRotation(axis, deg), pose.rotation));
  return next;
}

/** Translate along a camera axis; +1 mm on `x` moves x by exactly 1. */
export function translatePose(pose: PoseRecord, axis: Axis, mm: number): PoseRecord {
  const next = clonePose(pose);
  next.translation_mm[AXIS_INDEX[axis]] += mm;
  return next;
}

/** Largest absolute elementwise difference between two poses. */
export function poseMaxDiff(a: PoseRecord, b: PoseRecord): number {
  let worst = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      worst = Math.max(worst, Math.abs(a.rotation[i][j] - b.rotation[i][j]));
    }
    worst = Math.max(worst, Math.abs(a.translation_mm[i] - b.translation_mm[i]));
  }
  return worst;
}

/** Worst deviation of R * R^T from the identity. */
export function orthonormalityError(m: Mat3): number {
  let worst = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let g = 0;
      for (let k = 0; k < 3; k++) {
        g += m[i][k] * m[j][k];
      }
      worst = Math.max(worst, Math.abs(g - (i === j ? 1 : 0)));
    }
  }
  return worst;
}

export function isPoseRecord(value: unknown): value is PoseRecord {
  if (typeof value !== "object" || value === null) {
    return false;
  }
  const v = value as Record<string, unknown>;
  return (
    v.format === POSE_FORMAT &&
    typeof v.version === "number" &&
    Array.isArray(v.rotation) &&
    v.rotation.length === 3 &&
    Array.isArray(v.translation_mm) &&
    v.translation_mm.length === 3 &&
    typeof v.camera === "object" &&
    v.camera !== null
  );
}
