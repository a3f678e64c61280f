import math
from typing import List, Sequence, Tuple

from src.augment.policies import PolicyChain, PolicyKind, PolicySpec
from src.utils.exceptions import IncomparablePoliciesException
from src.utils.logger import get_logger

logger = get_logger(__name__)

Gradable = PolicySpec | PolicyChain

# policies that only reframe the image; the main pathway may train on nothing else
LIGHT_KINDS = frozenset({PolicyKind.IDENTITY, PolicyKind.CROP, PolicyKind.FLIP})


def aggressiveness(policy: PolicySpec) -> Tuple[float, ...]:
    """Per-family hyperparameter vector; larger components mean a larger deviation."""
    p = policy.params
    if policy.kind is PolicyKind.GRAY:
        return (p["alpha"],)
    if policy.kind is PolicyKind.BLUR:
        return (p["k"],)
    if policy.kind is PolicyKind.GRID_SHUFFLE:
        return (p["g"],)
    if policy.kind is PolicyKind.MPN:
        return (abs(math.log(p["s"])),)
    if policy.kind is PolicyKind.RAND_AUGMENT:
        return (p["n"], p["m"])
    if policy.kind is PolicyKind.CROP:
        return (-p["scale"],)
    if policy.kind is PolicyKind.FLIP:
        return (p["p"],)
    return ()


def _dominates(heavy: Tuple[float, ...], light: Tuple[float, ...]) -> bool:
    return all(h >= l for h, l in zip(heavy, light)) and any(h > l for h, l in zip(heavy, light))


def _same_policies_heavier(a: PolicyChain, b: PolicyChain) -> bool:
    kinds_a = [p.kind for p in a.policies]
    if not kinds_a or kinds_a != [p.kind for p in b.policies]:
        return False
    heavy = tuple(x for p in a.policies for x in aggressiveness(p))
    light = tuple(x for p in b.policies for x in aggressiveness(p))
    return _dominates(heavy, light)


def _proper_superset(a: PolicyChain, b: PolicyChain) -> bool:
    sig_a = {p.signature() for p in a.policies}
    sig_b = {p.signature() for p in b.policies}
    return sig_b < sig_a


def is_light(policy: Gradable) -> bool:
    return all(p.kind in LIGHT_KINDS for p in PolicyChain.of(policy).policies)


def is_heavier(a: Gradable, b: Gradable) -> bool:
    """True when `a` deviates more than `b`: same policies with more aggressive hyperparameters, or a proper superset."""
    chain_a, chain_b = PolicyChain.of(a), PolicyChain.of(b)
    return _same_policies_heavier(chain_a, chain_b) or _proper_superset(chain_a, chain_b)


def grade_policies(policies: Sequence[Gradable]) -> List[Gradable]:
    """Sort policies ascending by deviation and assign levels 1..K.

    Raises IncomparablePoliciesException when some pair is ordered by neither rule.
    """
    items = list(policies)
    wins = [0] * len(items)
    for i in range(len(items)):
        for j in range(i + 1, len(items)):
            if is_heavier(items[i], items[j]):
                wins[i] += 1
            elif is_heavier(items[j], items[i]):
                wins[j] += 1
            else:
                logger.error(f"Cannot order policies {items[i]} and {items[j]}")
                raise IncomparablePoliciesException(
                    "Neither hyperparameter ordering nor superset composition orders the pair",
                    details={"first": str(items[i]), "second": str(items[j])},
                )

    if sorted(wins) != list(range(len(items))):
        raise IncomparablePoliciesException("Deviation ordering is not transitive on the input",
                                            details={"policies": [str(p) for p in items]})

    ordered = [items[index] for index in sorted(range(len(items)), key=lambda i: wins[i])]
    graded = [policy.model_copy(update={"level": level}) for level, policy in enumerate(ordered, start=1)]
    logger.info(f"Graded policies: {', '.join(f'{p}=L{p.level}' for p in graded)}")
    return graded
