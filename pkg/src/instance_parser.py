import json
import logging
from pathlib import Path
from typing import Any, Union

from src.distributions import Distribution, Instance, make_piecewise_linear, rescale_to_unit
from src.errors import InstanceFormatError

logger = logging.getLogger(__name__)

DISTRIBUTION_TYPE = 'piecewise_linear_cdf'
INSTANCE_KEYS = {'buyer', 'seller'}
DISTRIBUTION_KEYS = {'type', 'knots', 'support'}


def _reject_constant(name: str):
    raise InstanceFormatError(f"Non-finite number {name} is not allowed")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class InstanceParser:
    """Strict reader for instance files.

    {"buyer": {"type": "piecewise_linear_cdf", "knots": [[0, 0], ..., [1, 1]]},
     "seller": {...}}

    An optional "support": [lo, hi] places knots on [lo, hi] instead of the
    unit interval; both sides must then share that support.
    """

    @staticmethod
    def parse_distribution(obj: Any, label: str = 'distribution') -> Distribution:
        if not isinstance(obj, dict):
            raise InstanceFormatError(f"{label} must be an object")
        unknown = set(obj) - DISTRIBUTION_KEYS
        if unknown:
            raise InstanceFormatError(f"Unknown fields in {label}: {sorted(unknown)}")
        if obj.get('type') != DISTRIBUTION_TYPE:
            raise InstanceFormatError(f"{label} type must be {DISTRIBUTION_TYPE!r}, got {obj.get('type')!r}")

        knots = obj.get('knots')
        if not isinstance(knots, list):
            raise InstanceFormatError(f"{label} knots must be a list")
        for knot in knots:
            if not (isinstance(knot, list) and len(knot) == 2 and all(_is_number(x) for x in knot)):
                raise InstanceFormatError(f"{label} knot {knot!r} is not a [value, probability] pair")

        if 'support' not in obj:
            return make_piecewise_linear(knots)

        support = obj['support']
        if not (isinstance(support, list) and len(support) == 2 and all(_is_number(x) for x in support)):
            raise InstanceFormatError(f"{label} support must be [lo, hi]")
        if not knots or knots[0][0] != support[0] or knots[-1][0] != support[1]:
            raise InstanceFormatError(f"{label} knots must start at {support[0]} and end at {support[1]}")
        dist, _ = rescale_to_unit(knots)
        return dist

    @staticmethod
    def parse_instance(obj: Any) -> Instance:
        if not isinstance(obj, dict):
            raise InstanceFormatError("Instance must be a JSON object")
        if set(obj) != INSTANCE_KEYS:
            raise InstanceFormatError(f"Instance keys must be exactly {sorted(INSTANCE_KEYS)}, got {sorted(obj)}")
        return Instance(
            buyer=InstanceParser.parse_distribution(obj['buyer'], 'buyer'),
            seller=InstanceParser.parse_distribution(obj['seller'], 'seller'),
        )

    @staticmethod
    def loads(text: str) -> Instance:
        try:
            obj = json.loads(text, parse_constant=_reject_constant)
        except json.JSONDecodeError as e:
            raise InstanceFormatError(f"Instance is not valid JSON: {str(e)}")
        return InstanceParser.parse_instance(obj)

    @staticmethod
    def load(path: Union[str, Path]) -> Instance:
        try:
            text = Path(path).read_text()
        except OSError as e:
            logger.error(f"Error reading instance file {path}: {str(e)}")
            raise InstanceFormatError(f"Cannot read instance file {path}: {e.strerror}")
        inst = InstanceParser.loads(text)
        logger.debug(f"Loaded instance from {path} ({len(inst.buyer.knots)} buyer knots, "
                     f"{len(inst.seller.knots)} seller knots)")
        return inst

    @staticmethod
    def dumps(inst: Instance) -> str:
        return json.dumps(inst.to_json(), indent=2)
