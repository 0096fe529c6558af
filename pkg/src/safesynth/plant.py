"""Black-box plants, the built-in room-temperature system, and datasets.

The synthesis path only ever sees a plant through `step`: initialise at x,
apply u, observe the next state.  The built-in room model

    x(t+1) = x(t) + tau * (a_env * (T_env - x(t)) + a_heat * (T_heat - x(t)) * u(t))

is the single-room heater loop with an outside temperature of 15 degrees and
a 45-degree heater, sampled every 5 time units.  External plants are driven
over a line-oriented child-process protocol so user models stay opaque.

Datasets are stored as plain CSV, one sample per row
``x1,...,xn,u1,...,um,x'1,...,x'n`` at full float precision, preceded by one
metadata comment line ``# n=.. m=.. role=.. seed=.. space=..``; reloading is
lossless.
"""

import enum
import os
import re
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CollectionError, DatasetFormatError, GeometryError
from .geometry import Box, SampleSpace, sample_uniform

ROOM_T_ENV = 15.0
ROOM_T_HEATER = 45.0
ROOM_ALPHA_ENV = 8e-3
ROOM_ALPHA_HEATER = 3.6e-3
ROOM_TAU = 5.0


def step_room(x: float, u: float):
    """One step of the room-temperature loop; works on scalars and arrays."""
    return x + ROOM_TAU * (
        ROOM_ALPHA_ENV * (ROOM_T_ENV - x) + ROOM_ALPHA_HEATER * (ROOM_T_HEATER - x) * u
    )


class BlackBoxSystem:
    """Deterministic simulate-only system: (x, u) -> x'.

    `reentrant` declares that step may be issued from several workers at once;
    external-process plants are not, so they are always queried sequentially.
    """

    name = "blackbox"
    reentrant = False

    def __init__(self, state_dim: int, input_dim: int):
        self.state_dim = int(state_dim)
        self.input_dim = int(input_dim)

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step_batch(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        out = np.empty_like(np.asarray(xs, dtype=float))
        for i in range(len(xs)):
            out[i] = self.step(xs[i], us[i])
        return out

    def close(self):
        pass


class RoomTemperaturePlant(BlackBoxSystem):
    name = "room-temp"
    reentrant = True

    def __init__(self):
        super().__init__(state_dim=1, input_dim=1)

    def step(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return np.atleast_1d(step_room(x[0], u[0]))

    def step_batch(self, xs, us):
        xs = np.asarray(xs, dtype=float)
        us = np.asarray(us, dtype=float)
        return step_room(xs[:, :1], us[:, :1])


class ExternalProcessPlant(BlackBoxSystem):
    """Child-process plant speaking a line protocol.

    Per query one line ``x1 ... xn u1 ... um`` is written to the child's
    stdin (flushed), and one line of n floats is read back as the next state.
    The process is spawned lazily on first use and queried strictly
    sequentially.
    """

    name = "external"
    reentrant = False

    def __init__(self, command: Sequence[str], state_dim: int, input_dim: int):
        super().__init__(state_dim, input_dim)
        if not command:
            raise CollectionError("external plant needs a non-empty command")
        self.command = [str(c) for c in command]
        self._proc: subprocess.Popen | None = None

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def step(self, x, u):
        proc = self._ensure_proc()
        query = " ".join(f"{v:.17g}" for v in np.concatenate([np.atleast_1d(x), np.atleast_1d(u)]))
        try:
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(query + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise CollectionError(f"external plant {shlex.join(self.command)} died: {exc}") from exc
        if not line:
            raise CollectionError(
                f"external plant {shlex.join(self.command)} closed its output stream"
            )
        vals = line.split()
        if len(vals) != self.state_dim:
            raise CollectionError(
                f"external plant returned {len(vals)} values, expected {self.state_dim}"
            )
        try:
            return np.array([float(v) for v in vals])
        except ValueError as exc:
            raise CollectionError(f"external plant returned non-numeric output: {line!r}") from exc

    def close(self):
        if self._proc is not None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.terminate()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Role(str, enum.Enum):
    SCENARIO = "scenario"
    VALIDATION = "validation"


@dataclass(frozen=True)
class Sample:
    """One observed transition (x, u, x')."""

    x: tuple[float, ...]
    u: tuple[float, ...]
    x_next: tuple[float, ...]


class Dataset:
    """I.i.d. transitions drawn from a sample space, with seed/role metadata."""

    def __init__(
        self,
        xs: np.ndarray,
        us: np.ndarray,
        x_nexts: np.ndarray,
        seed: int,
        role: Role,
        space: SampleSpace | None = None,
    ):
        self.xs = np.atleast_2d(np.asarray(xs, dtype=float))
        self.us = np.atleast_2d(np.asarray(us, dtype=float))
        self.x_nexts = np.atleast_2d(np.asarray(x_nexts, dtype=float))
        if not (len(self.xs) == len(self.us) == len(self.x_nexts)):
            raise DatasetFormatError("sample blocks disagree on length")
        if self.xs.shape[1] != self.x_nexts.shape[1]:
            raise DatasetFormatError("state and next-state dimensions disagree")
        self.seed = int(seed)
        self.role = Role(role)
        self.space = space

    @property
    def state_dim(self) -> int:
        return self.xs.shape[1]

    @property
    def input_dim(self) -> int:
        return self.us.shape[1]

    def __len__(self) -> int:
        return len(self.xs)

    def __getitem__(self, i: int) -> Sample:
        return Sample(tuple(self.xs[i]), tuple(self.us[i]), tuple(self.x_nexts[i]))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.role == other.role
            and self.xs.shape == other.xs.shape
            and self.us.shape == other.us.shape
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.us, other.us)
            and np.array_equal(self.x_nexts, other.x_nexts)
        )

    def subset(self, count: int) -> "Dataset":
        """Prefix view; same seed so nested-sample experiments stay honest."""
        return Dataset(
            self.xs[:count], self.us[:count], self.x_nexts[:count],
            self.seed, self.role, self.space,
        )


def collect(
    system: BlackBoxSystem,
    space: SampleSpace,
    count: int,
    seed: int,
    role: Role = Role.SCENARIO,
) -> Dataset:
    """Sample (x, u) uniformly, query the simulator once per pair.

    Deterministic for fixed (space, count, seed).  Simulator failures are
    reported with the failing sample index; nothing partial is returned.
    """
    if count < 1:
        raise GeometryError(f"collect needs count >= 1, got {count}")
    n = system.state_dim
    m = system.input_dim
    if space.n != n + m:
        raise GeometryError(
            f"sample space dimension {space.n} != state {n} + input {m}"
        )
    pts = sample_uniform(space, count, seed)
    xs = pts[:, :n]
    us = pts[:, n:]
    if system.reentrant:
        x_nexts = np.asarray(system.step_batch(xs, us), dtype=float)
        bad = np.flatnonzero(~np.all(np.isfinite(x_nexts), axis=1))
        if bad.size:
            raise CollectionError(f"simulator returned non-finite state at sample {bad[0]}")
    else:
        x_nexts = np.empty_like(xs)
        for i in range(count):
            try:
                x_nexts[i] = system.step(xs[i], us[i])
            except CollectionError as exc:
                raise CollectionError(f"sample {i}: {exc}") from exc
            if not np.all(np.isfinite(x_nexts[i])):
                raise CollectionError(f"simulator returned non-finite state at sample {i}")
    return Dataset(xs, us, x_nexts, seed=seed, role=role, space=space)


_HEADER_RE = re.compile(
    r"^#\s*n=(\d+)\s+m=(\d+)\s+role=(\w+)\s+seed=(-?\d+)(?:\s+space=(\S+))?\s*$"
)


def _space_to_header(space: SampleSpace) -> str:
    return ";".join(f"{lo:.17g},{hi:.17g}" for lo, hi in zip(space.box.lower, space.box.upper))


def _space_from_header(text: str) -> SampleSpace:
    pairs = []
    for chunk in text.split(";"):
        lo, hi = chunk.split(",")
        pairs.append([float(lo), float(hi)])
    return SampleSpace(Box.from_intervals(pairs))


def save_dataset(dataset: Dataset, path: str) -> None:
    """Atomic full-precision CSV dump (write to temp file, then rename)."""
    header = f"# n={dataset.state_dim} m={dataset.input_dim} role={dataset.role.value} seed={dataset.seed}"
    if dataset.space is not None:
        header += f" space={_space_to_header(dataset.space)}"
    rows = np.hstack([dataset.xs, dataset.us, dataset.x_nexts])
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_dataset(path: str) -> Dataset:
    """Parse a dataset CSV; malformed content fails with its line number."""
    with open(path, "r") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: empty file")
    match = _HEADER_RE.match(lines[0])
    if not match:
        raise DatasetFormatError(f"{path}: line 1: bad or missing metadata header")
    n, m = int(match.group(1)), int(match.group(2))
    role_text, seed = match.group(3), int(match.group(4))
    try:
        role = Role(role_text)
    except ValueError:
        raise DatasetFormatError(f"{path}: line 1: unknown role {role_text!r}") from None
    space = None
    if match.group(5):
        try:
            space = _space_from_header(match.group(5))
        except (ValueError, GeometryError) as exc:
            raise DatasetFormatError(f"{path}: line 1: bad space metadata: {exc}") from exc
        if space.n != n + m:
            raise DatasetFormatError(
                f"{path}: line 1: space dimension {space.n} != n + m = {n + m}"
            )
    want = 2 * n + m
    data = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != want:
            raise DatasetFormatError(
                f"{path}: line {lineno}: expected {want} fields, found {len(fields)}"
            )
        try:
            data.append([float(f) for f in fields])
        except ValueError:
            raise DatasetFormatError(f"{path}: line {lineno}: non-numeric field") from None
    if not data:
        raise DatasetFormatError(f"{path}: no sample rows")
    arr = np.asarray(data, dtype=float)
    return Dataset(arr[:, :n], arr[:, n : n + m], arr[:, n + m :], seed, role, space)


def make_plant(name_or_spec) -> BlackBoxSystem:
    """Resolve the plant declared in configuration: builtin name or command."""
    if isinstance(name_or_spec, str):
        if name_or_spec == RoomTemperaturePlant.name:
            return RoomTemperaturePlant()
        raise CollectionError(f"unknown builtin plant {name_or_spec!r}")
    spec = dict(name_or_spec)
    return ExternalProcessPlant(
        spec["command"], state_dim=spec["state_dim"], input_dim=spec["input_dim"]
    )
