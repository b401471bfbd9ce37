#![allow(dead_code, unused_imports)]

use gridtoken_broker::BrokerConfig;
pub use gridtoken_testbed::stack::{
    admin_credential, broker_config, default_changes as registry_changes, query_param, Stack,
    ADMIN_CREDENTIAL as ADMIN, BROKER_URL, DAY, DUNE_PRODUCTION, ISSUER_BASE, T0,
};

pub struct Options {
    pub persistent: bool,
    pub skip: Vec<&'static str>,
    pub tweak: fn(&mut BrokerConfig),
}

impl Default for Options {
    fn default() -> Self {
        Options {
            persistent: false,
            skip: vec!["sbnd"],
            tweak: |_| {},
        }
    }
}

pub fn env() -> Stack {
    env_with(Options::default())
}

pub fn env_with(opts: Options) -> Stack {
    let mut b = Stack::builder().skip(&opts.skip).tweak(opts.tweak);
    if opts.persistent {
        b = b.persistent();
    }
    b.build()
}
