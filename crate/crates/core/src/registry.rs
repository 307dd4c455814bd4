//! Name-keyed factories for runtime-selectable strategies.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

type Factory<T, A> = Box<dyn Fn(&A) -> Result<Box<T>> + Send + Sync>;

/// Factories producing `Box<T>` from construction arguments `A`, looked up by
/// name. Names iterate in sorted order.
pub struct Registry<T: ?Sized, A: ?Sized = ()> {
    kind: &'static str,
    factories: BTreeMap<String, Factory<T, A>>,
}

impl<T: ?Sized, A: ?Sized> Registry<T, A> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            factories: BTreeMap::new(),
        }
    }

    pub fn kind(&self) -> &'static str {
        self.kind
    }

    /// Add a factory. Registering a name twice is an error.
    pub fn register<F>(&mut self, name: &str, factory: F) -> Result<()>
    where
        F: Fn(&A) -> Result<Box<T>> + Send + Sync + 'static,
    {
        if self.factories.contains_key(name) {
            return Err(Error::InvalidParameter(format!(
                "{} '{name}' is already registered",
                self.kind
            )));
        }
        self.factories.insert(name.to_string(), Box::new(factory));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, args: &A) -> Result<Box<T>> {
        match self.factories.get(name) {
            Some(f) => f(args),
            None => Err(Error::UnknownName {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }
}

impl<T: ?Sized, A: ?Sized> fmt::Debug for Registry<T, A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("names", &self.names())
            .finish()
    }
}
