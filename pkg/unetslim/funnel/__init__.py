"""Channel funnels: coupled singular initialization, merging and baselines."""
from unetslim.funnel.pairs import (
    LinearPair,
    AttentionProjections,
    ConvPair,
    FunnelPair,
    conv2d,
    channel_mix,
)
from unetslim.funnel.csi import (
    csi_linear_pair,
    csi_attention_qk,
    csi_value_output,
    csi_conv_pair,
    csi_heads,
    effective_residual,
)
from unetslim.funnel.merge import (
    merge_linear,
    merge_conv,
    merge_attention_qk,
    merge_value_output,
    merge_funnel,
)
from unetslim.funnel.baselines import (
    truncated_layer_baseline,
    he_init_baseline,
    count_params,
)
