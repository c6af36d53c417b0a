/// Bad flags, configuration or inputs.
pub const USAGE: u8 = 1;
/// Failure while training, sampling or evaluating.
pub const RUNTIME: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: USAGE,
            error: error.into(),
        }
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: RUNTIME,
            error: error.into(),
        }
    }
}

/// Tags an error with the exit code it should produce.
pub trait Classify<T> {
    fn usage(self, context: &str) -> Result<T, Failure>;
    fn runtime(self, context: &str) -> Result<T, Failure>;
}

impl<T, E> Classify<T> for Result<T, E>
where
    E: std::error::Error + Send + Sync + 'static,
{
    fn usage(self, context: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::usage(anyhow::Error::new(e).context(context.to_string())))
    }

    fn runtime(self, context: &str) -> Result<T, Failure> {
        self.map_err(|e| Failure::runtime(anyhow::Error::new(e).context(context.to_string())))
    }
}
