#include "caprnn/version.hpp"

namespace caprnn {

const char* version() { return "0.1.0"; }

}  // namespace caprnn
