#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace flowsim {

// Error classes map one-to-one onto CLI exit codes:
// usage = 2, data = 3, numeric = 4.
enum class ErrorKind : int { Usage = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const noexcept { return kind_; }
    const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

[[noreturn]] inline void raise_usage(std::string code, const std::string& message) {
    throw Error(ErrorKind::Usage, std::move(code), message);
}

[[noreturn]] inline void raise_data(std::string code, const std::string& message) {
    throw Error(ErrorKind::Data, std::move(code), message);
}

[[noreturn]] inline void raise_numeric(std::string code, const std::string& message) {
    throw Error(ErrorKind::Numeric, std::move(code), message);
}

}  // namespace flowsim
