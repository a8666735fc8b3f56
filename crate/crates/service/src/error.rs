use haptiforge::mapper::MapperError;
use haptiforge::protocol::ProtocolError;
use haptiforge::session::SessionError;
use haptiforge::stimulator::StimError;

/// Everything the runtime, server and CLI can fail with. `kind()` is the
/// stable name shown to clients and on the command line.
#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Core(#[from] haptiforge::Error),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("config {path}: {message}")]
    Config { path: String, message: String },
    #[error("no session has been started")]
    NoSession,
    #[error("session {0} is still running")]
    SessionActive(String),
    #[error("device link: {0}")]
    Link(String),
    #[error("session has {0} ratings and cannot be aggregated yet")]
    SessionIncomplete(usize),
    #[error("the service was started without a layout")]
    NoLayout,
    #[error("runtime has stopped")]
    Unavailable,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for ServiceError {
            fn from(e: $t) -> Self {
                ServiceError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    MapperError,
    StimError,
    SessionError,
    ProtocolError,
    haptiforge::geometry::GeometryError,
    haptiforge::layout::LayoutError,
    haptiforge::perception::PerceptionError
);

impl ServiceError {
    pub fn kind(&self) -> &'static str {
        match self {
            ServiceError::Core(e) => e.kind(),
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Config { .. } => "BadConfig",
            ServiceError::NoSession => "NoSession",
            ServiceError::SessionActive(_) => "SessionActive",
            ServiceError::Link(_) => "LinkFailure",
            ServiceError::SessionIncomplete(_) => "SessionIncomplete",
            ServiceError::NoLayout => "NoLayout",
            ServiceError::Unavailable => "Unavailable",
            ServiceError::Io { .. } => "Io",
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        ServiceError::Io {
            context: context.into(),
            source,
        }
    }

    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self.kind() {
            "BadRequest" | "Parse" | "InvalidEvent" | "BadRating" | "BadConfig" | "BadParameter" => 400,
            "NoSession" | "SessionActive" | "SessionIncomplete" | "OutOfOrder" | "Complete" => 409,
            "NoLayout" => 404,
            "LinkFailure" => 502,
            "Unavailable" => 503,
            "Io" => 500,
            _ => 422,
        }
    }
}
