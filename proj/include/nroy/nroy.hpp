#pragma once

#include <nroy/abc.hpp>
#include <nroy/acquisition.hpp>
#include <nroy/core.hpp>
#include <nroy/design.hpp>
#include <nroy/gp.hpp>
#include <nroy/history_match.hpp>
#include <nroy/io.hpp>
#include <nroy/optimize.hpp>
#include <nroy/regression.hpp>
#include <nroy/report.hpp>
#include <nroy/simulators.hpp>
