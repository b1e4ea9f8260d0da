#pragma once

#include "pdhlock/bessel.hpp"
#include "pdhlock/errors.hpp"
#include "pdhlock/ingest.hpp"
#include "pdhlock/linewidth.hpp"
#include "pdhlock/loopan.hpp"
#include "pdhlock/pdh.hpp"
#include "pdhlock/psd.hpp"
#include "pdhlock/tfcore.hpp"
#include "pdhlock/tuner.hpp"
