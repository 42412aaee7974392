use std::fmt;

/// Why a command stopped. Usage problems exit with 2, pipeline failures
/// with 1 and name the stage that failed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Stage { stage: &'static str, error: anyhow::Error },
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Stage { .. } => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "usage: {msg}"),
            Failure::Stage { stage, error } => {
                // Library errors often repeat their source in their own
                // message, so skip causes the text already ends with.
                let mut text = error.to_string();
                for cause in error.chain().skip(1) {
                    let cause = cause.to_string();
                    if !text.ends_with(&cause) {
                        text = format!("{text}: {cause}");
                    }
                }
                write!(f, "{stage} failed: {text}")
            }
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;

pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CmdResult<T> {
        self.map_err(|e| Failure::Stage { stage, error: e.into() })
    }
}

pub fn usage<T>(msg: impl Into<String>) -> CmdResult<T> {
    Err(Failure::Usage(msg.into()))
}
