"""Forward-only toy spatio-temporal UNet."""
from unetslim.toyunet.spec import ToyUNetSpec
from unetslim.toyunet.network import (
    ToyUNet,
    build,
    apply_temporal_multiscaling,
    apply_spatial_multiscaling,
    inject_funnels,
    merge_funnels,
    inject_gates,
    set_gates,
    prune,
)
from unetslim.toyunet.flops import (
    count_flops,
    stacked_flops,
    multiscaling_reductions,
    block_plan,
)
