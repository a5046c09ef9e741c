#pragma once

#include "mfh/ablation.hpp"
#include "mfh/autograd.hpp"
#include "mfh/config.hpp"
#include "mfh/errors.hpp"
#include "mfh/extractor.hpp"
#include "mfh/fab.hpp"
#include "mfh/freq_transform.hpp"
#include "mfh/pgm.hpp"
#include "mfh/pipeline.hpp"
#include "mfh/rng.hpp"
#include "mfh/spatial_stub.hpp"
#include "mfh/tensor.hpp"
#include "mfh/tensor_io.hpp"
#include "mfh/toy.hpp"
#include "mfh/weights_io.hpp"
