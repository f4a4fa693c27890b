#pragma once

#include <stdexcept>
#include <string>

namespace orbitedit {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndexError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct EditError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct IntegrityError : DataError {
    using DataError::DataError;
};
struct TrainingError : Error {
    using Error::Error;
};
struct InjectionError : Error {
    using Error::Error;
};
struct StepError : Error {
    using Error::Error;
};
struct SelectionError : Error {
    using Error::Error;
};
struct DegenerateAnchorError : Error {
    using Error::Error;
};
struct IoError : Error {
    using Error::Error;
};

}  // namespace orbitedit
