"""
Tomography plans, configurations and count datasets.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from config.settings import BASIS_CONVENTION, SCHEMA_VERSION
from core.errors import DatasetError
from models.gates import preparation_sequences

logger = logging.getLogger('dataset')

PREP_SETS = ("pauli6", "sic4", "custom")

@dataclass(frozen=True)
class Configuration:
    """Per-observed-qubit preparation and basis indices"""
    prep: tuple
    basis: tuple

    def __post_init__(self):
        object.__setattr__(self, 'prep', tuple(int(i) for i in self.prep))
        object.__setattr__(self, 'basis', tuple(int(i) for i in self.basis))
        if len(self.prep) != len(self.basis):
            raise DatasetError("prep and basis must cover the same observed qubits")

    def prep_index(self, n_prep):
        """Lexicographic index i of the preparation product"""
        return int(np.ravel_multi_index(self.prep, (n_prep,) * len(self.prep)))

    def basis_index(self, n_basis):
        """Lexicographic index m of the basis product"""
        return int(np.ravel_multi_index(self.basis, (n_basis,) * len(self.basis)))


@dataclass(frozen=True)
class ExperimentPlan:
    n_observed: int
    prep_set: str
    times_us: tuple
    n_shots: int
    basis_set: str = "xyz"
    custom_preps: tuple = None

    def __post_init__(self):
        object.__setattr__(self, 'times_us', tuple(float(t) for t in self.times_us))
        if self.custom_preps is not None:
            object.__setattr__(self, 'custom_preps', preparation_sequences("custom", self.custom_preps))
        self.validate()

    def validate(self):
        if self.n_observed < 1:
            raise DatasetError("n_observed must be >= 1")
        if self.prep_set not in PREP_SETS:
            raise DatasetError(f"Unknown prep_set '{self.prep_set}' (expected one of {PREP_SETS})")
        if self.basis_set != "xyz":
            raise DatasetError(f"Unsupported basis_set '{self.basis_set}'")
        if not self.times_us or self.times_us[0] != 0.0:
            raise DatasetError("times_us must start at 0")
        if any(b <= a for a, b in zip(self.times_us, self.times_us[1:])):
            raise DatasetError("times_us must be strictly ascending")
        if int(self.n_shots) < 1:
            raise DatasetError("n_shots must be >= 1")
        preparation_sequences(self.prep_set, self.custom_preps)

    @property
    def preparations(self):
        return preparation_sequences(self.prep_set, self.custom_preps)

    @property
    def n_prep(self):
        return len(self.preparations)

    @property
    def n_basis(self):
        return len(self.basis_set)

    @property
    def n_outcomes(self):
        return 2 ** self.n_observed

    @property
    def n_prep_configs(self):
        return self.n_prep ** self.n_observed

    @property
    def n_basis_configs(self):
        return self.n_basis ** self.n_observed

    @property
    def times(self):
        return np.array(self.times_us)

    def config_id(self, config):
        return config.prep_index(self.n_prep) * self.n_basis_configs + config.basis_index(self.n_basis)

    def configurations(self):
        """All configurations, preparation product outer and basis product inner"""
        preps = np.ndindex(*(self.n_prep,) * self.n_observed)
        bases = list(np.ndindex(*(self.n_basis,) * self.n_observed))
        return [Configuration(p, b) for p in preps for b in bases]

    def header(self):
        data = {
            "schema_version": SCHEMA_VERSION,
            "n_observed": self.n_observed,
            "prep_set": self.prep_set,
            "basis_set": self.basis_set,
            "basis_convention": BASIS_CONVENTION,
            "times_us": list(self.times_us),
            "n_shots": int(self.n_shots),
        }
        if self.prep_set == "custom":
            data["custom_preps"] = [[s if isinstance(s, str) else list(s) for s in seq] for seq in self.custom_preps]
        return data

    @classmethod
    def from_dict(cls, data):
        try:
            version = data.get("schema_version", SCHEMA_VERSION)
            if version != SCHEMA_VERSION:
                raise DatasetError(f"Unsupported schema_version {version}")
            return cls(
                n_observed=int(data["n_observed"]),
                prep_set=data["prep_set"],
                times_us=tuple(data["times_us"]),
                n_shots=int(data["n_shots"]),
                basis_set=data.get("basis_set", "xyz"),
                custom_preps=data.get("custom_preps"),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"Malformed plan: {e}") from e


@dataclass(frozen=True, eq=False)
class CountRecord:
    config: Configuration
    t_index: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(counts, 1), 0)):
                raise DatasetError("Counts must be integers")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, 'counts', counts)

    def to_dict(self):
        return {"prep": list(self.config.prep), "basis": list(self.config.basis),
                "t_index": int(self.t_index), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class RecordIndex:
    """Column arrays over the records of a dataset"""
    prep_ids: np.ndarray
    basis_ids: np.ndarray
    config_ids: np.ndarray
    t_index: np.ndarray
    counts: np.ndarray
    shots: np.ndarray


@dataclass(eq=False)
class TomographyDataset:
    plan: ExperimentPlan
    records: list = field(default_factory=list)

    def __post_init__(self):
        self.records = list(self.records)
        self.validate()

    def validate(self):
        plan = self.plan
        for r, record in enumerate(self.records):
            config = record.config
            if len(config.prep) != plan.n_observed:
                raise DatasetError(f"Record {r}: expected {plan.n_observed} observed qubits")
            if any(i < 0 or i >= plan.n_prep for i in config.prep):
                raise DatasetError(f"Record {r}: preparation index out of range")
            if any(i < 0 or i >= plan.n_basis for i in config.basis):
                raise DatasetError(f"Record {r}: basis index out of range")
            if not 0 <= record.t_index < len(plan.times_us):
                raise DatasetError(f"Record {r}: t_index {record.t_index} out of range")
            if record.counts.shape != (plan.n_outcomes,):
                raise DatasetError(f"Record {r}: expected {plan.n_outcomes} counts")
            if np.any(record.counts < 0):
                raise DatasetError(f"Record {r}: negative counts")
            if int(record.counts.sum()) != int(plan.n_shots):
                raise DatasetError(f"Record {r}: counts sum to {int(record.counts.sum())}, expected {plan.n_shots}")

    def __len__(self):
        return len(self.records)

    @cached_property
    def index(self):
        plan = self.plan
        n = len(self.records)
        prep_ids = np.array([rec.config.prep_index(plan.n_prep) for rec in self.records], dtype=int)
        basis_ids = np.array([rec.config.basis_index(plan.n_basis) for rec in self.records], dtype=int)
        counts = np.array([rec.counts for rec in self.records], dtype=np.int64).reshape(n, plan.n_outcomes)
        return RecordIndex(
            prep_ids=prep_ids,
            basis_ids=basis_ids,
            config_ids=prep_ids * plan.n_basis_configs + basis_ids,
            t_index=np.array([rec.t_index for rec in self.records], dtype=int),
            counts=counts,
            shots=counts.sum(axis=1),
        )

    @property
    def n_observations(self):
        return int(len(self.records) * self.plan.n_shots)

    def subset(self, record_ids):
        return TomographyDataset(self.plan, [self.records[i] for i in record_ids])

    def with_counts(self, counts, n_shots):
        """Same records and plan with replaced counts and shot number"""
        plan = ExperimentPlan(self.plan.n_observed, self.plan.prep_set, self.plan.times_us,
                              int(n_shots), self.plan.basis_set, self.plan.custom_preps)
        records = [CountRecord(rec.config, rec.t_index, c) for rec, c in zip(self.records, counts)]
        return TomographyDataset(plan, records)

    def to_dict(self):
        data = self.plan.header()
        data["records"] = [rec.to_dict() for rec in self.records]
        return data

    @classmethod
    def from_dict(cls, data):
        plan = ExperimentPlan.from_dict(data)
        try:
            records = [
                CountRecord(Configuration(r["prep"], r["basis"]), int(r["t_index"]), np.asarray(r["counts"]))
                for r in data.get("records", [])
            ]
        except (KeyError, TypeError, ValueError) as e:
            raise DatasetError(f"Malformed record: {e}") from e
        dataset = cls(plan, records)
        logger.info(f"Loaded dataset with {len(records)} records")
        return dataset
