//! Token client: finds a usable access token or gets a new one from the
//! broker, and keeps token files in the standard places.

pub mod discovery;
pub mod flow;
pub mod layout;

pub use discovery::{discover_bearer, BearerSource, EnvVars};
pub use flow::{ClientError, ClientOptions, Interaction, Outcome, Source, Terminal, TokenClient};
pub use layout::{write_token_files, TokenFileLayout, DEFAULT_ROLE};
