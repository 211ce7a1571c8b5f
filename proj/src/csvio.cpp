namespace netexp {}
