"""Reading and writing plain-text camera files.

Format: a line reading "extrinsic" followed by a 4x4 world-to-camera matrix
(one row per line), a line reading "intrinsic" followed by a 3x3 matrix, then
a final line of depth values whose first number is the sweep start. Tokens
may be separated by any whitespace; blank lines are skipped.
"""

from __future__ import annotations

import numpy as np

from .errors import CamParseError, NonOrthonormalRotationError
from .geometry import CameraExtrinsics, CameraIntrinsics, CameraPair

# Text files carry limited precision, so rotations are accepted at a looser
# tolerance than the in-memory invariant and then snapped to the nearest
# proper rotation.
_FILE_ROTATION_ATOL = 1e-6


class _TokenStream:
    def __init__(self, path):
        self.path = path
        self.tokens: list[tuple[str, int]] = []
        with open(path, "r", encoding="utf-8") as fh:
            for line_number, line in enumerate(fh, start=1):
                for token in line.split():
                    self.tokens.append((token, line_number))
        self.cursor = 0
        self.last_line = self.tokens[-1][1] if self.tokens else 0

    def expect_word(self, word: str) -> None:
        if self.cursor >= len(self.tokens):
            raise CamParseError(self.last_line, f"expected '{word}', reached end of file")
        token, line_number = self.tokens[self.cursor]
        if token.lower() != word:
            raise CamParseError(line_number, f"expected '{word}', found '{token}'")
        self.cursor += 1

    def read_floats(self, count: int, what: str) -> list[float]:
        values = []
        for _ in range(count):
            if self.cursor >= len(self.tokens):
                raise CamParseError(
                    self.last_line, f"expected {count} numbers for {what}, file ended early"
                )
            token, line_number = self.tokens[self.cursor]
            try:
                values.append(float(token))
            except ValueError:
                raise CamParseError(
                    line_number, f"expected a number for {what}, found '{token}'"
                ) from None
            self.cursor += 1
        return values

    def maybe_read_float(self):
        if self.cursor >= len(self.tokens):
            return None
        token, line_number = self.tokens[self.cursor]
        try:
            value = float(token)
        except ValueError:
            raise CamParseError(line_number, f"trailing token '{token}' is not a number") from None
        self.cursor += 1
        return value


def _snap_rotation(rotation: np.ndarray) -> np.ndarray:
    """Nearest proper rotation in the Frobenius sense (polar factor)."""
    u, _, vt = np.linalg.svd(rotation)
    snapped = u @ vt
    if np.linalg.det(snapped) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        snapped = u @ vt
    return snapped


def parse_cam_file(path) -> tuple[CameraIntrinsics, CameraExtrinsics, float]:
    """Parse one camera file.

    Returns:
        (intrinsics, world-to-camera extrinsics, minimum sweep depth).

    Raises:
        CamParseError: On structural problems, naming the offending line.
        NonOrthonormalRotationError: When the rotation block is not a proper
            rotation within 1e-6. Rotations inside that tolerance are snapped
            to the nearest exact rotation.
    """
    stream = _TokenStream(path)

    stream.expect_word("extrinsic")
    ext_values = stream.read_floats(16, "the extrinsic matrix")
    extrinsic = np.array(ext_values).reshape(4, 4)
    if np.abs(extrinsic[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-6:
        raise CamParseError(
            stream.tokens[stream.cursor - 1][1],
            f"extrinsic bottom row must be 0 0 0 1, got {extrinsic[3].tolist()}",
        )

    stream.expect_word("intrinsic")
    int_values = stream.read_floats(9, "the intrinsic matrix")
    intrinsic = np.array(int_values).reshape(3, 3)

    depth_min = stream.maybe_read_float()
    if depth_min is None:
        raise CamParseError(stream.last_line, "missing depth line after the intrinsic matrix")
    stream.maybe_read_float()  # depth interval, parsed but unused

    rotation = extrinsic[:3, :3]
    gram_err = float(np.abs(rotation.T @ rotation - np.eye(3)).max())
    det = float(np.linalg.det(rotation))
    if gram_err > _FILE_ROTATION_ATOL or abs(det - 1.0) > _FILE_ROTATION_ATOL:
        raise NonOrthonormalRotationError(
            f"{path}: rotation fails orthonormality at 1e-6 "
            f"(max |R^T R - I| = {gram_err:.3e}, det = {det:.9f})"
        )
    extrinsics = CameraExtrinsics(_snap_rotation(rotation), extrinsic[:3, 3])
    intrinsics = CameraIntrinsics.from_matrix(intrinsic)
    return intrinsics, extrinsics, float(depth_min)


def write_cam_file(
    path,
    intrinsics: CameraIntrinsics,
    extrinsics: CameraExtrinsics,
    depth_min: float = 1.0,
    depth_interval: float = 0.01,
) -> None:
    """Write a camera file with full double precision, round-trippable by the parser."""
    m = extrinsics.matrix4()
    k = intrinsics.matrix()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("extrinsic\n")
        for row in m:
            fh.write(" ".join(f"{value:.17g}" for value in row) + "\n")
        fh.write("\nintrinsic\n")
        for row in k:
            fh.write(" ".join(f"{value:.17g}" for value in row) + "\n")
        fh.write(f"\n{depth_min:.17g} {depth_interval:.17g}\n")


def load_camera_pair(
    ref_path, src_path, image_size: tuple[int, int]
) -> tuple[CameraPair, float]:
    """Build a reference/source pair from two camera files.

    The relative extrinsics are source-world-to-camera composed with the
    inverse of the reference transform. Returns the pair plus the reference
    file's minimum sweep depth.
    """
    ref_intr, ref_ext, depth_min = parse_cam_file(ref_path)
    src_intr, src_ext, _ = parse_cam_file(src_path)
    rel = src_ext.compose(ref_ext.inverse())
    return CameraPair(ref_intr, src_intr, rel, image_size), depth_min
