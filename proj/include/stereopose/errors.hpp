#pragma once

#include <stdexcept>
#include <string>

namespace stereopose {

// Exit-code taxonomy used by the CLI: 2 usage, 3 I/O, 4 data mismatch,
// 5 degenerate math input, 6 check failure.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DataMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DegenerateInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckFailureError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace stereopose
