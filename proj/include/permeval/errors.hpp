#pragma once

#include <stdexcept>
#include <string>

namespace permeval {

// Error taxonomy shared across the library. The CLI maps each class to a
// distinct exit code, so throw the most specific one that applies.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid or inconsistent user-supplied configuration (bad run config, bad
// dataset record, unusable label scheme, missing required file). Exit code 2.
struct ConfigError : Error {
    using Error::Error;
};

// A generation or embedding backend failed permanently (transport failure
// after retries, non-success HTTP status, malformed response). Exit code 3.
struct BackendError : Error {
    using Error::Error;
};

// A metric was requested over a run whose (question x permutation) grid has
// holes. Exit code 4.
struct IncompleteGridError : Error {
    using Error::Error;
};

} // namespace permeval
