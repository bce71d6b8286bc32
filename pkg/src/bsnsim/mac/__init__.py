"""MAC protocol registry."""

from .csma import Beacon802154Mac
from .direct import DirectMac
from .smac import SMac
from .tbw import TbwMac
from .tdma import PbTdmaMac

PROTOCOLS = {
    "csma802154": Beacon802154Mac,
    "pbtdma": PbTdmaMac,
    "smac": SMac,
    "tbw": TbwMac,
    "tbw_alwayson": TbwMac,   # same mechanism, coordinator radio never sleeps
    "direct": DirectMac,
}


def mac_class(name: str):
    try:
        return PROTOCOLS[name]
    except KeyError:
        raise ValueError(f"unknown protocol: {name!r}; "
                         f"choose from {sorted(PROTOCOLS)}") from None
