#pragma once

#include "tcds/core.hpp"
#include "tcds/cds.hpp"
#include "tcds/query.hpp"
#include "tcds/train.hpp"
#include "tcds/descriptor_file.hpp"
#include "tcds/synthetic.hpp"
#include "tcds/checkpoint.hpp"
#include "tcds/oracle.hpp"
#include "tcds/gradcheck.hpp"
