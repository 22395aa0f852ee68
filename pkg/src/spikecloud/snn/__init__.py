from .layers import ConvBNLIF, ResF, ResFB, SeqBatchNorm, batchnorm, pointwise_conv
from .network import (
    ForwardResult,
    NetworkConfig,
    SampleBatch,
    SpikeCloudNet,
    backward,
    encode_batch,
    forward,
    layer_specs,
    mse_loss,
    vote,
)
from .neuron import (
    ATanSpike,
    NeuronConfig,
    NeuronState,
    SpikingNeuron,
    heaviside_spike,
    neuron_step,
    spike,
    surrogate_grad,
    surrogate_sigma,
)
