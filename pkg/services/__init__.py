# Services package: data, spike encoders, kernels and the CPC head
