"""Patient-level train/validation/test splits.

All samples of a patient land in the same fold. Fold sizes use largest-
remainder rounding, so each differs from its exact ratio by less than one
patient.

Examples:
    >>> train, val, test = split(samples, SplitSpec(seed=3))

Tests:
    - tests/unit/test_split.py
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence

from protoehr.config import SplitSpec
from protoehr.core.errors import ConfigError
from protoehr.core.seeding import make_rng
from protoehr.schemas.ehr import TaskSample

logger = logging.getLogger(__name__)


def fold_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    """Largest-remainder apportionment of ``n`` patients to the three folds."""
    exact = [n * spec.train, n * spec.val, n * spec.test]
    sizes = [math.floor(x) for x in exact]
    by_remainder = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in by_remainder[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes[0], sizes[1], sizes[2]


def split_patients(patient_ids: Sequence[int], spec: SplitSpec) -> tuple[set[int], set[int], set[int]]:
    """Assign unique patient ids to folds.

    Raises:
        ConfigError: If some fold would be empty.
    """
    ids = sorted(set(patient_ids))
    n_train, n_val, n_test = fold_sizes(len(ids), spec)
    if min(n_train, n_val, n_test) == 0:
        raise ConfigError(
            f"{len(ids)} patients cannot fill a {spec.train}/{spec.val}/{spec.test} split"
        )
    order = make_rng(spec.seed, "split").permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return (
        set(shuffled[:n_train]),
        set(shuffled[n_train : n_train + n_val]),
        set(shuffled[n_train + n_val :]),
    )


def split(
    samples: Sequence[TaskSample], spec: SplitSpec
) -> tuple[list[TaskSample], list[TaskSample], list[TaskSample]]:
    """Partition samples by patient id, preserving sample order within folds."""
    train_ids, val_ids, _ = split_patients([s.patient_id for s in samples], spec)
    folds: tuple[list[TaskSample], list[TaskSample], list[TaskSample]] = ([], [], [])
    for sample in samples:
        if sample.patient_id in train_ids:
            folds[0].append(sample)
        elif sample.patient_id in val_ids:
            folds[1].append(sample)
        else:
            folds[2].append(sample)
    logger.info(
        f"Split {len(samples)} samples into {len(folds[0])}/{len(folds[1])}/{len(folds[2])}"
    )
    return folds
