#pragma once

#include "posdec/core.hpp"
#include "posdec/montage.hpp"
#include "posdec/binary_io.hpp"
#include "posdec/recording_io.hpp"
#include "posdec/dsp.hpp"
#include "posdec/spectral.hpp"
#include "posdec/feature_matrix.hpp"
#include "posdec/robust.hpp"
#include "posdec/forest.hpp"
#include "posdec/evaluate.hpp"
#include "posdec/importance.hpp"
#include "posdec/synth.hpp"
#include "posdec/config.hpp"
#include "posdec/pipeline.hpp"
