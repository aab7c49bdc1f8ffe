"""Ingest project-level donation records into a district-by-sector dataset.

Donations arrive at four location precisions.  District- and point-level
records land in their (containing) district; region- and country-level
records are dispersed proportionally to district population over the
modeled district set.  Districts can be merged (pooling donations and
population) or dropped (their direct donations are discarded but reported).

Currency is handled in integer cents internally so that every split and
dispersal conserves the total exactly.  ``aggregate`` therefore returns an
integer cent matrix; use :func:`cents_to_dollars` before building the
per-capita response.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from decimal import Decimal, InvalidOperation, ROUND_HALF_EVEN
from pathlib import Path

import numpy as np

from .dataset import ArealDataset
from .errors import (
    DataError,
    MalformedRecordError,
    ResolutionError,
    StructureError,
)

__all__ = [
    "SECTORS",
    "PRECISIONS",
    "DonationRecord",
    "District",
    "DistrictRegistry",
    "AggregationReport",
    "split_subprojects",
    "disperse_by_population",
    "aggregate",
    "aggregate_report",
    "per_capita_standardize",
    "cents_to_dollars",
    "read_donations",
    "read_registry",
    "read_covariates",
    "read_adjacency",
]

SECTORS = ("Agriculture", "Education", "Governance", "Health", "RD", "RPT", "WSI")
PRECISIONS = ("country", "region", "district", "point")

_QUANTUM = Decimal("0.01")


def _to_amount(value) -> Decimal:
    """Coerce to a positive Decimal quantized to whole cents."""
    if isinstance(value, float):
        value = repr(value)
    try:
        amount = Decimal(value).quantize(_QUANTUM, rounding=ROUND_HALF_EVEN)
    except (InvalidOperation, ValueError) as exc:
        raise MalformedRecordError(f"unparseable amount {value!r}") from exc
    if amount <= 0:
        raise MalformedRecordError(f"amount must be positive, got {value!r}")
    return amount


def _cents(amount: Decimal) -> int:
    return int(amount.scaleb(2))


def _dollars(cents: int) -> Decimal:
    return Decimal(cents).scaleb(-2).quantize(_QUANTUM)


def cents_to_dollars(totals_cents: np.ndarray) -> np.ndarray:
    """Convert an integer cent matrix to float dollars."""
    return np.asarray(totals_cents, dtype=float) / 100.0


@dataclass(frozen=True)
class DonationRecord:
    """One donation row: a subproject share of a project's total amount.

    ``amount`` is the total project amount; ``subproject_count`` sibling
    records (sharing ``project_id``) divide it equally, each allocated at
    its own recorded precision and location.
    """

    project_id: str
    sector: str
    amount: Decimal
    precision: str
    location_key: str
    subproject_count: int = 1

    def __post_init__(self):
        object.__setattr__(self, "amount", _to_amount(self.amount))
        if self.sector not in SECTORS:
            raise MalformedRecordError(
                f"project {self.project_id}: unknown sector {self.sector!r}"
            )
        if self.precision not in PRECISIONS:
            raise MalformedRecordError(
                f"project {self.project_id}: unknown precision {self.precision!r}"
            )
        if not isinstance(self.subproject_count, int) or self.subproject_count < 1:
            raise MalformedRecordError(
                f"project {self.project_id}: subproject_count must be a positive "
                f"integer, got {self.subproject_count!r}"
            )
        if self.precision == "country":
            if self.location_key:
                raise MalformedRecordError(
                    f"project {self.project_id}: country precision takes no location key"
                )
        elif not self.location_key:
            raise MalformedRecordError(
                f"project {self.project_id}: {self.precision} precision needs a location key"
            )


@dataclass(frozen=True)
class District:
    name: str
    region: str
    population: int

    def __post_init__(self):
        if not isinstance(self.population, int) or self.population <= 0:
            raise StructureError(
                f"district {self.name}: population must be a positive integer"
            )


@dataclass(frozen=True)
class DistrictRegistry:
    """Raw district list plus the merge and drop rules that define the modeled set."""

    districts: tuple[District, ...]
    merge_map: tuple[tuple[str, str], ...] = ()
    drop_list: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "districts", tuple(self.districts))
        object.__setattr__(
            self, "merge_map", tuple((s, t) for s, t in self.merge_map)
        )
        object.__setattr__(self, "drop_list", tuple(self.drop_list))
        names = [d.name for d in self.districts]
        if len(set(names)) != len(names):
            raise StructureError("duplicate district names in registry")
        known = set(names)
        sources = [s for s, _ in self.merge_map]
        targets = [t for _, t in self.merge_map]
        if len(set(sources)) != len(sources):
            raise StructureError("a district is merged more than once")
        for s, t in self.merge_map:
            if s not in known or t not in known:
                raise StructureError(f"merge {s} -> {t} references unknown district")
            if s == t:
                raise StructureError(f"district {s} merged into itself")
            if t in sources:
                raise StructureError(f"chained merge through {t} is not supported")
        dropped = set(self.drop_list)
        if dropped - known:
            raise StructureError(f"drop list references unknown districts: {dropped - known}")
        if dropped & set(targets):
            raise StructureError("a merge target cannot also be dropped")
        if dropped & set(sources):
            raise StructureError("a merged-away district cannot also be dropped")

    def modeled_districts(self) -> tuple[District, ...]:
        """Post-merge, post-drop districts in registry order, populations pooled."""
        sources = {s: t for s, t in self.merge_map}
        extra: dict[str, int] = {}
        for d in self.districts:
            if d.name in sources:
                extra[sources[d.name]] = extra.get(sources[d.name], 0) + d.population
        out = []
        dropped = set(self.drop_list)
        for d in self.districts:
            if d.name in sources or d.name in dropped:
                continue
            if d.name in extra:
                d = replace(d, population=d.population + extra[d.name])
            out.append(d)
        return tuple(out)

    def resolve_district(self, name: str) -> str | None:
        """Modeled district for ``name``; None if dropped; ResolutionError if unknown."""
        sources = {s: t for s, t in self.merge_map}
        resolved = sources.get(name, name)
        if resolved in self.drop_list:
            return None
        if resolved not in {d.name for d in self.districts}:
            raise ResolutionError(f"unknown district {name!r}")
        return resolved

    def modeled_regions(self) -> tuple[str, ...]:
        seen: list[str] = []
        for d in self.modeled_districts():
            if d.region not in seen:
                seen.append(d.region)
        return tuple(seen)


def split_subprojects(record: DonationRecord) -> list[DonationRecord]:
    """Divide a record's amount equally among its subprojects.

    Shares are quantized to cents; the residue is spread one cent at a time
    over the trailing shares so totals are conserved exactly and no two
    shares differ by more than one cent.
    """
    m = record.subproject_count
    if m < 1:
        raise MalformedRecordError(
            f"project {record.project_id}: subproject_count must be >= 1"
        )
    if m == 1:
        return [record]
    shares = _equal_shares(_cents(record.amount), m)
    if min(shares) <= 0:
        raise MalformedRecordError(
            f"project {record.project_id}: amount {record.amount} cannot be split "
            f"into {m} positive shares"
        )
    return [
        replace(record, amount=_dollars(share), subproject_count=1) for share in shares
    ]


def _equal_shares(cents: int, m: int) -> list[int]:
    base, residue = divmod(cents, m)
    return [base + 1 if i >= m - residue else base for i in range(m)]


def _weighted_shares(cents: int, weights: list[int]) -> list[int]:
    """Floor-proportional split; residue cents go to the trailing entries."""
    total = sum(weights)
    shares = [cents * w // total for w in weights]
    residue = cents - sum(shares)
    for i in range(residue):
        shares[len(shares) - 1 - i] += 1
    return shares


def disperse_by_population(
    amount,
    scope: str,
    registry: DistrictRegistry,
    *,
    region: str = "",
) -> dict[str, Decimal]:
    """Spread an amount over modeled districts proportionally to population.

    ``scope`` is 'country' (all modeled districts) or 'region' (modeled
    districts of ``region``).  Shares sum to the amount exactly.
    """
    amount = _to_amount(amount)
    modeled = registry.modeled_districts()
    if scope == "country":
        chosen = list(modeled)
    elif scope == "region":
        chosen = [d for d in modeled if d.region == region]
        if not chosen:
            raise ResolutionError(f"unknown or empty region {region!r}")
    else:
        raise ResolutionError(f"dispersal scope must be country or region, got {scope!r}")
    shares = _weighted_shares(_cents(amount), [d.population for d in chosen])
    return {d.name: _dollars(s) for d, s in zip(chosen, shares)}


@dataclass(frozen=True)
class AggregationReport:
    """Aggregation output with an exact currency audit trail (cents)."""

    totals_cents: np.ndarray
    district_names: tuple[str, ...]
    sector_names: tuple[str, ...]
    currency_in_cents: int
    allocated_cents: int
    discarded_cents: int
    discarded: tuple[tuple[str, str, int], ...]  # (project_id, location, cents)
    n_projects: int
    n_records: int

    @property
    def conserved(self) -> bool:
        return self.currency_in_cents == self.allocated_cents + self.discarded_cents


def _project_groups(records: list[DonationRecord]) -> dict[str, list[DonationRecord]]:
    groups: dict[str, list[DonationRecord]] = {}
    for rec in records:
        groups.setdefault(rec.project_id, []).append(rec)
    return groups


def _group_shares(pid: str, group: list[DonationRecord]) -> list[tuple[DonationRecord, int]]:
    """Per-record cent shares for one project's sibling records.

    A project appears either as one record per subproject (each allocated an
    equal share at its own location) or as a single record standing for all
    of its subprojects at one location (allocated the full amount there).
    """
    m = group[0].subproject_count
    amount = group[0].amount
    for rec in group[1:]:
        if rec.subproject_count != m or rec.amount != amount:
            raise MalformedRecordError(
                f"project {pid}: sibling records disagree on amount or subproject_count"
            )
    cents = _cents(amount)
    if len(group) == m:
        return list(zip(group, _equal_shares(cents, m)))
    if len(group) == 1:
        return [(group[0], cents)]
    raise MalformedRecordError(
        f"project {pid}: {len(group)} records but subproject_count={m}"
    )


def aggregate_report(
    records: list[DonationRecord], registry: DistrictRegistry
) -> AggregationReport:
    """Allocate all records to (district, sector) cells with a full audit."""
    modeled = registry.modeled_districts()
    names = tuple(d.name for d in modeled)
    index = {name: i for i, name in enumerate(names)}
    sector_index = {s: j for j, s in enumerate(SECTORS)}
    pops = [d.population for d in modeled]
    region_pops = {
        region: [(index[d.name], d.population) for d in modeled if d.region == region]
        for region in registry.modeled_regions()
    }
    totals = np.zeros((len(modeled), len(SECTORS)), dtype=np.int64)
    discarded: list[tuple[str, str, int]] = []
    unresolved: list[str] = []
    currency_in = 0

    groups = _project_groups(records)
    for pid, group in groups.items():
        shares = _group_shares(pid, group)
        currency_in += sum(s for _, s in shares)
        for rec, cents in shares:
            j = sector_index[rec.sector]
            if rec.precision == "country":
                for i, share in enumerate(_weighted_shares(cents, pops)):
                    totals[i, j] += share
            elif rec.precision == "region":
                pairs = region_pops.get(rec.location_key)
                if pairs is None:
                    unresolved.append(f"{pid}: region {rec.location_key!r}")
                    continue
                shares_r = _weighted_shares(cents, [p for _, p in pairs])
                for (i, _), share in zip(pairs, shares_r):
                    totals[i, j] += share
            else:  # district or point, pre-resolved to a district name
                try:
                    resolved = registry.resolve_district(rec.location_key)
                except ResolutionError:
                    unresolved.append(f"{pid}: {rec.precision} {rec.location_key!r}")
                    continue
                if resolved is None:
                    discarded.append((pid, rec.location_key, cents))
                else:
                    totals[index[resolved], j] += cents

    if unresolved:
        raise ResolutionError(
            "unresolvable locations: " + "; ".join(unresolved)
        )
    allocated = int(totals.sum())
    discarded_cents = sum(c for _, _, c in discarded)
    return AggregationReport(
        totals_cents=totals,
        district_names=names,
        sector_names=SECTORS,
        currency_in_cents=currency_in,
        allocated_cents=allocated,
        discarded_cents=discarded_cents,
        discarded=tuple(discarded),
        n_projects=len(groups),
        n_records=len(records),
    )


def aggregate(records: list[DonationRecord], registry: DistrictRegistry) -> np.ndarray:
    """District-by-sector currency totals in integer cents."""
    return aggregate_report(records, registry).totals_cents


def per_capita_standardize(
    totals,
    registry: DistrictRegistry,
    raw_covariates,
    *,
    covariate_names: list[str] | None = None,
    sector_names: tuple[str, ...] = SECTORS,
    adjacency=None,
    floor: float | None = None,
) -> ArealDataset:
    """Build the modeled dataset: per-capita response and standardized design.

    ``totals`` is the (district, sector) currency matrix in the unit the
    response should be stated in (dollars; divide :func:`aggregate` output
    by 100 first, see :func:`cents_to_dollars`).  Cells with non-positive
    totals raise unless an explicit positive ``floor`` (currency per person)
    is supplied, in which case they are set to the floor.
    """
    modeled = registry.modeled_districts()
    n = len(modeled)
    totals = np.asarray(totals, dtype=float)
    if totals.shape != (n, len(sector_names)):
        raise DataError(
            f"totals shape {totals.shape} does not match {n} modeled districts x "
            f"{len(sector_names)} sectors"
        )
    pops = np.array([d.population for d in modeled], dtype=float)
    y = totals / pops[:, None]
    bad = np.argwhere(y <= 0.0)
    if bad.size:
        if floor is None:
            cells = ", ".join(
                f"({modeled[i].name}, {sector_names[j]})" for i, j in bad[:10]
            )
            raise DataError(
                f"{len(bad)} cell(s) with non-positive totals: {cells}; supply an "
                "explicit floor or fix the data"
            )
        if floor <= 0.0:
            raise DataError("floor must be positive")
        y[y <= 0.0] = floor

    C = np.asarray(raw_covariates, dtype=float)
    if C.ndim != 2 or C.shape[0] != n:
        raise DataError(f"raw covariates shape {C.shape} does not match n={n}")
    means = C.mean(axis=0)
    sds = C.std(axis=0, ddof=1)
    zero = np.nonzero(sds == 0.0)[0]
    if zero.size:
        raise DataError(f"covariate column(s) {zero.tolist()} have zero variance")
    Z = (C - means) / sds
    X = np.column_stack([np.ones(n), Z])

    if covariate_names is None:
        covariate_names = [f"X{p}" for p in range(1, C.shape[1] + 1)]
    if len(covariate_names) != C.shape[1]:
        raise DataError(
            f"{len(covariate_names)} covariate names for {C.shape[1]} columns"
        )
    A = np.zeros((n, n)) if adjacency is None else np.asarray(adjacency, dtype=float)
    return ArealDataset(
        y=y,
        X=X,
        A=A,
        district_names=tuple(d.name for d in modeled),
        sector_names=tuple(sector_names),
        covariate_names=("Intercept", *covariate_names),
        covariate_means=means,
        covariate_sds=sds,
    )


def read_donations(path) -> list[DonationRecord]:
    """Parse ``donations.csv``.

    Header: ``project_id,sector,amount_usd,precision,location_key,subproject_count``.
    """
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(
            reader.fieldnames,
            ["project_id", "sector", "amount_usd", "precision", "location_key", "subproject_count"],
            path,
        )
        for lineno, row in enumerate(reader, start=2):
            try:
                count = int(row["subproject_count"])
            except ValueError as exc:
                raise MalformedRecordError(
                    f"{path}:{lineno}: bad subproject_count {row['subproject_count']!r}"
                ) from exc
            records.append(
                DonationRecord(
                    project_id=row["project_id"].strip(),
                    sector=row["sector"].strip(),
                    amount=row["amount_usd"].strip(),
                    precision=row["precision"].strip(),
                    location_key=row["location_key"].strip(),
                    subproject_count=count,
                )
            )
    if not records:
        raise MalformedRecordError(f"{path}: no donation records")
    return records


def read_registry(districts_path, merges_path=None, drops_path=None) -> DistrictRegistry:
    """Parse ``districts.csv`` plus optional ``merges.csv`` and ``drops.csv``."""
    districts = []
    with open(districts_path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, ["district", "region", "population"], districts_path)
        for lineno, row in enumerate(reader, start=2):
            try:
                pop = int(row["population"])
            except ValueError as exc:
                raise StructureError(
                    f"{districts_path}:{lineno}: bad population {row['population']!r}"
                ) from exc
            districts.append(
                District(name=row["district"].strip(), region=row["region"].strip(), population=pop)
            )
    merges: list[tuple[str, str]] = []
    if merges_path is not None and Path(merges_path).exists():
        with open(merges_path, newline="") as fh:
            reader = csv.DictReader(fh)
            _require_columns(reader.fieldnames, ["from", "to"], merges_path)
            merges = [(row["from"].strip(), row["to"].strip()) for row in reader]
    drops: list[str] = []
    if drops_path is not None and Path(drops_path).exists():
        with open(drops_path, newline="") as fh:
            reader = csv.DictReader(fh)
            _require_columns(reader.fieldnames, ["district"], drops_path)
            drops = [row["district"].strip() for row in reader]
    return DistrictRegistry(
        districts=tuple(districts), merge_map=tuple(merges), drop_list=tuple(drops)
    )


def read_covariates(path, registry: DistrictRegistry) -> tuple[np.ndarray, list[str]]:
    """Parse ``covariates.csv`` (district + raw covariate columns).

    Rows are keyed by modeled district name and must cover the modeled set
    exactly.  Returns the matrix in modeled district order plus names.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or reader.fieldnames[0] != "district":
            raise DataError(f"{path}: first column must be 'district'")
        names = list(reader.fieldnames[1:])
        if not names:
            raise DataError(f"{path}: no covariate columns")
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            district = row["district"].strip()
            if district in rows:
                raise DataError(f"{path}:{lineno}: duplicate district {district!r}")
            try:
                rows[district] = [float(row[c]) for c in names]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric covariate value") from exc
    modeled = [d.name for d in registry.modeled_districts()]
    missing = [d for d in modeled if d not in rows]
    if missing:
        raise DataError(f"{path}: missing covariate rows for {missing}")
    extra = [d for d in rows if d not in modeled]
    if extra:
        raise DataError(f"{path}: covariate rows for unmodeled districts {extra}")
    return np.array([rows[d] for d in modeled], dtype=float), names


def read_adjacency(path, registry: DistrictRegistry) -> np.ndarray:
    """Parse an edge list ``adjacency.csv`` (header ``district_a,district_b``).

    Endpoints may be raw district names; edges are remapped through merges,
    edges touching dropped districts vanish, and self-edges created by a
    merge are removed.
    """
    modeled = [d.name for d in registry.modeled_districts()]
    index = {name: i for i, name in enumerate(modeled)}
    A = np.zeros((len(modeled), len(modeled)))
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        _require_columns(reader.fieldnames, ["district_a", "district_b"], path)
        for row in reader:
            a = registry.resolve_district(row["district_a"].strip())
            b = registry.resolve_district(row["district_b"].strip())
            if a is None or b is None or a == b:
                continue
            A[index[a], index[b]] = 1.0
            A[index[b], index[a]] = 1.0
    return A


def _require_columns(fieldnames, expected, path) -> None:
    if fieldnames is None or list(fieldnames) != list(expected):
        raise DataError(
            f"{path}: expected header {','.join(expected)}, got "
            f"{','.join(fieldnames) if fieldnames else '<empty>'}"
        )
