#pragma once

#include <stdexcept>
#include <string>

namespace silora {

// All contract violations surface as silora::Error with a human-readable
// message naming the offending operation.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void check(bool ok, const std::string& msg) {
    if (!ok) {
        throw Error(msg);
    }
}

} // namespace silora
