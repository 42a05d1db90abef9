# Modules package


