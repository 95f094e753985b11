#ifndef KSAVE_KSAVE_HPP
#define KSAVE_KSAVE_HPP

#include "ksave/edr.hpp"
#include "ksave/error.hpp"
#include "ksave/experiments.hpp"
#include "ksave/fieldsim.hpp"
#include "ksave/io.hpp"
#include "ksave/kernels.hpp"
#include "ksave/linalg.hpp"
#include "ksave/oracle.hpp"
#include "ksave/save_core.hpp"

#endif // KSAVE_KSAVE_HPP
