#pragma once

// Umbrella header.
#include "dtr/calendar.hpp"
#include "dtr/clustering.hpp"
#include "dtr/config.hpp"
#include "dtr/dataset.hpp"
#include "dtr/error.hpp"
#include "dtr/evaluation.hpp"
#include "dtr/features.hpp"
#include "dtr/forecaster.hpp"
#include "dtr/gbdt.hpp"
#include "dtr/io.hpp"
#include "dtr/labeler.hpp"
#include "dtr/multistage.hpp"
#include "dtr/pipeline.hpp"
#include "dtr/quantile.hpp"
#include "dtr/random.hpp"
#include "dtr/relay.hpp"
#include "dtr/root_finding.hpp"
#include "dtr/series.hpp"
#include "dtr/table.hpp"
#include "dtr/thermal.hpp"
